#include "stspot/checkpoint.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stspot::train {

namespace {

void write_bin(const std::string& path, const std::vector<double>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!f) throw IoError("short write: " + path);
}

std::vector<double> read_bin(const std::string& path, std::size_t count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing checkpoint file: " + path);
  std::vector<double> data(count);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f || f.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw IoError("truncated checkpoint file: " + path);
  return data;
}

std::uint64_t vec_fnv(const std::vector<double>& v) {
  return fnv1a64(v.data(), v.size() * sizeof(double));
}

std::string bin_name(const std::string& param, const char* suffix) {
  std::string n = param;
  for (char& c : n)
    if (c == '/' || c == '\\') c = '_';
  return n + suffix + ".bin";
}

}  // namespace

void save_checkpoint(const std::string& dir, const nn::ParamStore& params,
                     long long iteration, const OptState* opt,
                     const json& config_snapshot) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "stspot-checkpoint-v1";
  manifest["iteration"] = iteration;
  manifest["config"] = config_snapshot;
  manifest["params"] = json::array();
  for (const auto& [name, t] : params.all()) {
    const auto& v = t.values();
    const std::string file = bin_name(name, "");
    write_bin((fs::path(dir) / file).string(), v);
    manifest["params"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"file", file}, {"fnv", vec_fnv(v)}});
  }
  if (opt) {
    manifest["opt"] = {{"step", opt->step}, {"entries", json::array()}};
    for (const auto& [name, e] : opt->entries) {
      const std::string mf = bin_name(name, ".m");
      const std::string vf = bin_name(name, ".v");
      write_bin((fs::path(dir) / mf).string(), e.m);
      write_bin((fs::path(dir) / vf).string(), e.v);
      manifest["opt"]["entries"].push_back({{"name", name},
                                            {"m_file", mf},
                                            {"v_file", vf},
                                            {"m_fnv", vec_fnv(e.m)},
                                            {"v_fnv", vec_fnv(e.v)}});
    }
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir, nn::ParamStore& params,
                                 OptState* opt) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(manifest_path);
  if (!f) throw IoError("missing checkpoint manifest: " + manifest_path);
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(str_cat("checkpoint manifest ", manifest_path, ": ",
                             e.what()));
  }

  LoadedCheckpoint out;
  out.iteration = manifest.at("iteration").get<long long>();
  if (manifest.contains("config")) out.config_snapshot = manifest["config"];

  std::map<std::string, json> listed;
  for (const auto& p : manifest.at("params"))
    listed[p.at("name").get<std::string>()] = p;

  for (const auto& [name, t] : params.all()) {
    auto it = listed.find(name);
    if (it == listed.end())
      throw IoError(str_cat("checkpoint is missing parameter '", name, "'"));
    const auto shape = it->second.at("shape").get<std::vector<int>>();
    if (shape != t.shape())
      throw IoError(str_cat("checkpoint parameter '", name, "' has shape ",
                            ad::shape_str(shape), ", model expects ",
                            ad::shape_str(t.shape())));
    const std::string file =
        (fs::path(dir) / it->second.at("file").get<std::string>()).string();
    auto data = read_bin(file, t.values().size());
    if (vec_fnv(data) != it->second.at("fnv").get<std::uint64_t>())
      throw IoError(str_cat("checksum mismatch for parameter '", name, "' (",
                            file, ")"));
    const_cast<ad::Tensor&>(t).values() = std::move(data);
    listed.erase(it);
  }
  for (const auto& [name, p] : listed)
    warn(str_cat("checkpoint parameter '", name, "' not used by this model"));

  if (opt && manifest.contains("opt")) {
    opt->step = manifest["opt"].at("step").get<long long>();
    opt->entries.clear();
    for (const auto& e : manifest["opt"].at("entries")) {
      const std::string name = e.at("name").get<std::string>();
      if (!params.contains(name)) continue;
      const std::size_t count = params.get(name).values().size();
      OptState::Entry entry;
      entry.m = read_bin((fs::path(dir) / e.at("m_file").get<std::string>()).string(), count);
      entry.v = read_bin((fs::path(dir) / e.at("v_file").get<std::string>()).string(), count);
      if (vec_fnv(entry.m) != e.at("m_fnv").get<std::uint64_t>() ||
          vec_fnv(entry.v) != e.at("v_fnv").get<std::uint64_t>())
        throw IoError(str_cat("checksum mismatch in optimizer state for '",
                              name, "'"));
      opt->entries[name] = std::move(entry);
    }
  }
  return out;
}

}  // namespace stspot::train
