#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stspot/checkpoint.hpp"
#include "stspot/config.hpp"
#include "stspot/gradcheck.hpp"
#include "stspot/model.hpp"
#include "stspot/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stspot;

namespace {

/// Removes an output directory this invocation created if the command fails.
class OutputGuard {
 public:
  explicit OutputGuard(const std::string& path)
      : path_(path), created_(!fs::exists(path)) {}
  ~OutputGuard() {
    if (armed_ && created_ && fs::exists(path_)) {
      std::error_code ec;
      fs::remove_all(path_, ec);
    }
  }
  void disarm() { armed_ = false; }

 private:
  fs::path path_;
  bool created_;
  bool armed_ = true;
};

config::RunConfig resolve_config(const std::string& profile,
                                 const std::string& config_path) {
  config::RunConfig cfg = config::profile_config(profile);
  if (!config_path.empty()) cfg = config::load_config(config_path, cfg);
  return cfg;
}

struct LoadedModel {
  config::RunConfig cfg;
  model::SpotterModel net;
};

LoadedModel model_from_checkpoint(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(manifest_path);
  if (!f) throw IoError("missing checkpoint manifest: " + manifest_path);
  json manifest;
  f >> manifest;
  if (!manifest.contains("config") || !manifest["config"].contains("run"))
    throw ConfigError("checkpoint lacks an embedded run config");
  const json& run = manifest["config"]["run"];
  config::RunConfig cfg = config::from_json(
      run, config::profile_config(run.value("profile", std::string("desk"))));
  LoadedModel lm{cfg, model::SpotterModel::create(cfg.model)};
  train::load_checkpoint(dir, lm.net.params());
  return lm;
}

std::vector<evalkit::Prediction> detections_to_predictions(
    const std::vector<model::Detection>& dets) {
  std::vector<evalkit::Prediction> preds;
  for (const auto& d : dets)
    preds.push_back({d.polygon, d.text, d.score});
  return preds;
}

int cmd_synth_data(const std::string& out, const config::RunConfig& cfg,
                   std::uint64_t seed, int count, const std::string& format) {
  OutputGuard guard(out);
  std::vector<datagen::SceneSample> samples;
  for (int i = 0; i < count; ++i)
    samples.push_back(datagen::synthesize_sample(cfg.gen, seed + i));
  datagen::write_dataset(out, samples, format, seed);
  const auto lex = evalkit::build_lexicons(samples, seed);
  evalkit::write_lexicons(lex, (fs::path(out) / "lexicons").string());
  {
    std::ofstream cf(fs::path(out) / "genconfig.json");
    cf << config::to_json(cfg).dump(2) << "\n";
  }
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  guard.disarm();
  return 0;
}

int cmd_train(const std::string& data, const std::string& out,
              config::RunConfig cfg) {
  OutputGuard guard(out);
  const auto dataset =
      datagen::load_dataset((fs::path(data) / "manifest.json").string());
  model::SpotterModel net = model::SpotterModel::create(cfg.model);
  cfg.train.config_snapshot_json = json{{"run", config::to_json(cfg)}}.dump();
  const auto result = train::train(net, cfg.train, dataset, out);
  std::cout << "trained " << result.iterations_run << " iterations; metrics at "
            << result.metrics_path << "; final checkpoint "
            << result.last_checkpoint << "\n";
  guard.disarm();
  return 0;
}

int cmd_infer(const std::string& data, const std::string& checkpoint,
              const std::string& out, const std::string& config_path) {
  OutputGuard guard(out);
  LoadedModel lm = model_from_checkpoint(checkpoint);
  if (!config_path.empty()) lm.cfg = config::load_config(config_path, lm.cfg);
  const auto dataset =
      datagen::load_dataset((fs::path(data) / "manifest.json").string());
  fs::create_directories(out);
  for (const auto& sample : dataset) {
    const auto dets = lm.net.infer(sample, lm.cfg.infer);
    evalkit::write_predictions(
        (fs::path(out) / (sample.sample_id + ".txt")).string(),
        detections_to_predictions(dets));
  }
  std::cout << "wrote predictions for " << dataset.size() << " samples to "
            << out << "\n";
  guard.disarm();
  return 0;
}

int cmd_eval(const std::string& data, const std::string& preds,
             const std::string& out, const std::string& protocol_arg,
             std::string lexicon_dir, double iou_threshold) {
  const auto dataset =
      datagen::load_dataset((fs::path(data) / "manifest.json").string());

  std::vector<std::vector<evalkit::Prediction>> preds_per_image;
  for (const auto& sample : dataset) {
    const fs::path p = fs::path(preds) / (sample.sample_id + ".txt");
    if (fs::exists(p)) {
      preds_per_image.push_back(evalkit::read_predictions(p.string()));
    } else {
      warn("no prediction file for sample " + sample.sample_id);
      preds_per_image.push_back({});
    }
  }

  std::vector<evalkit::Protocol> protocols;
  std::string tok;
  std::stringstream ss(protocol_arg);
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) protocols.push_back(evalkit::protocol_from_name(tok));
  if (protocols.empty()) protocols.push_back(evalkit::Protocol::None);

  evalkit::LexiconSet lex;
  bool needs_lexicons = false;
  for (auto p : protocols)
    if (p != evalkit::Protocol::None) needs_lexicons = true;
  if (needs_lexicons) {
    if (lexicon_dir.empty()) lexicon_dir = (fs::path(data) / "lexicons").string();
    lex = evalkit::load_lexicons(lexicon_dir);
  }

  const auto report =
      evalkit::evaluate(preds_per_image, dataset, lex, protocols, iou_threshold);
  evalkit::write_report(report, out);
  std::cout << evalkit::render_report(report);
  std::cout << "report written to " << out << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  const auto registry = train::gradcheck_registry(seed);
  bool all_pass = true;
  std::printf("%-34s %10s %14s  %s\n", "operation", "coords", "max_rel_err",
              "status");
  for (const auto& check : registry) {
    const auto report = check.run();
    const bool pass = report.max_rel_err < tolerance &&
                      !report.nondifferentiable_point;
    all_pass = all_pass && pass;
    std::printf("%-34s %10lld %14.3e  %s%s\n", check.name.c_str(),
                report.coords_checked, report.max_rel_err,
                pass ? "pass" : "FAIL",
                report.nondifferentiable_point ? " (non-differentiable point)"
                                               : "");
  }
  if (!all_pass) throw Error("gradient checks failed");
  return 0;
}

int cmd_visualize(const std::string& data, const std::string& checkpoint,
                  const std::string& out, const std::string& sample_filter) {
  OutputGuard guard(out);
  LoadedModel lm = model_from_checkpoint(checkpoint);
  const auto dataset =
      datagen::load_dataset((fs::path(data) / "manifest.json").string());

  auto composite = [](const Image& img, const std::vector<double>& grid,
                      int side, const geom::Box& box) {
    // 0.5 * image luminance + 0.5 * mask value inside the box.
    std::vector<double> canvas(static_cast<std::size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        canvas[static_cast<std::size_t>(y) * img.width + x] =
            0.5 * (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y0)));
    const int y1 = std::min(img.height, static_cast<int>(std::ceil(box.y1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x0)));
    const int x1 = std::min(img.width, static_cast<int>(std::ceil(box.x1)));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const int gi = std::clamp(
            static_cast<int>((y + 0.5 - box.y0) / box.height() * side), 0,
            side - 1);
        const int gj = std::clamp(
            static_cast<int>((x + 0.5 - box.x0) / box.width() * side), 0,
            side - 1);
        canvas[static_cast<std::size_t>(y) * img.width + x] +=
            0.5 * grid[static_cast<std::size_t>(gi) * side + gj];
      }
    return canvas;
  };

  int written = 0;
  for (const auto& sample : dataset) {
    if (!sample_filter.empty() && sample.sample_id != sample_filter) continue;
    const auto dets = lm.net.infer(sample, lm.cfg.infer, /*with_overlays=*/true);
    for (std::size_t k = 0; k < dets.size(); ++k) {
      const fs::path inst_dir =
          fs::path(out) / sample.sample_id / ("instance_" + std::to_string(k));
      fs::create_directories(inst_dir);
      const auto& ov = dets[k].overlays;
      const auto& box = dets[k].box;
      write_pgm((inst_dir / "initial.pgm").string(), sample.image.height,
                sample.image.width,
                composite(sample.image, ov.initial, ov.initial_side, box));
      const char* names[3] = {"m1.pgm", "m2.pgm", "m3.pgm"};
      for (int level = 0; level < 3; ++level)
        write_pgm((inst_dir / names[level]).string(), sample.image.height,
                  sample.image.width,
                  composite(sample.image, ov.m[level], ov.m_side[level], box));
      write_pgm((inst_dir / "sm3.pgm").string(), sample.image.height,
                sample.image.width,
                composite(sample.image, ov.sm3, ov.sm3_side, box));
      written += 5;
    }
  }
  std::cout << "wrote " << written << " overlay layers to " << out << "\n";
  guard.disarm();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene text spotting toolkit"};
  app.require_subcommand(1);

  std::string profile = "desk", config_path, out_dir, data_dir, checkpoint_dir,
              preds_dir, format = "polygon", protocol = "none", lexicon_dir,
              sample_filter, gradient_block;
  std::uint64_t seed = 0;
  int count = -1;
  long long iters = -1;
  double tolerance = 1e-3, iou_threshold = 0.5;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--profile", profile, "configuration profile")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", config_path, "JSON config overriding profile");
    cmd->add_option("--seed", seed, "seed for all randomness");
  };

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--out", out_dir, "output dataset directory")->required();
  synth->add_option("--count", count, "number of samples");
  synth->add_option("--format", format, "annotation format")
      ->check(CLI::IsMember({"quad", "polygon"}));

  auto* tr = app.add_subcommand("train", "train on a dataset");
  add_common(tr);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "run directory for checkpoints + metrics")
      ->required();
  tr->add_option("--iters", iters, "override iteration count");
  tr->add_option("--gradient-block", gradient_block,
                 "sever recognition-loss gradients into the detector")
      ->check(CLI::IsMember({"on", "off"}));

  auto* inf = app.add_subcommand("infer", "run detection + recognition");
  add_common(inf);
  inf->add_option("--data", data_dir, "dataset directory")->required();
  inf->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")
      ->required();
  inf->add_option("--out", out_dir, "prediction output directory")->required();

  auto* ev = app.add_subcommand("eval", "score predictions against a dataset");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--preds", preds_dir, "prediction directory")->required();
  ev->add_option("--out", out_dir, "report file")->required();
  ev->add_option("--protocol", protocol,
                 "comma list of none,full,strong,weak,generic");
  ev->add_option("--lexicons", lexicon_dir, "lexicon directory");
  ev->add_option("--iou", iou_threshold, "detection IoU threshold");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--seed", seed, "seed");
  gc->add_option("--tolerance", tolerance, "max relative error");

  auto* vis = app.add_subcommand("visualize", "write mask overlays");
  add_common(vis);
  vis->add_option("--data", data_dir, "dataset directory")->required();
  vis->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")
      ->required();
  vis->add_option("--out", out_dir, "overlay output directory")->required();
  vis->add_option("--sample", sample_filter, "only this sample id");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      config::RunConfig cfg = resolve_config(profile, config_path);
      if (count > 0) cfg.dataset_size = count;
      if (synth->count("--format")) cfg.dataset_format = format;
      return cmd_synth_data(out_dir, cfg, seed, cfg.dataset_size,
                            cfg.dataset_format);
    }
    if (tr->parsed()) {
      config::RunConfig cfg = resolve_config(profile, config_path);
      if (tr->count("--seed")) cfg.train.seed = seed;
      if (iters >= 0) {
        cfg.train.iterations = iters;
        std::vector<long long> kept;
        for (long long m : cfg.train.milestones)
          if (m < iters) kept.push_back(m);
        cfg.train.milestones = kept;
      }
      if (!gradient_block.empty())
        cfg.train.gradient_block = gradient_block == "on";
      return cmd_train(data_dir, out_dir, cfg);
    }
    if (inf->parsed()) return cmd_infer(data_dir, checkpoint_dir, out_dir, config_path);
    if (ev->parsed())
      return cmd_eval(data_dir, preds_dir, out_dir, protocol, lexicon_dir,
                      iou_threshold);
    if (gc->parsed()) return cmd_gradcheck(seed, tolerance);
    if (vis->parsed())
      return cmd_visualize(data_dir, checkpoint_dir, out_dir, sample_filter);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
