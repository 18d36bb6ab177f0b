#include "stspot/evalkit.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stspot/common.hpp"
#include "stspot/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stspot::evalkit {

double polygon_iou(const geom::Polygon& a, const geom::Polygon& b) {
  if (a.size() < 3 || b.size() < 3 || geom::area(a) <= 0.0 ||
      geom::area(b) <= 0.0) {
    warn("polygon_iou: degenerate polygon, scoring 0");
    return 0.0;
  }
  return geom::iou(a, b);
}

MatchResult match_detections(const std::vector<Prediction>& preds,
                             const std::vector<datagen::TextInstanceGT>& gts,
                             double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw ConfigError("match threshold must lie in (0,1)");
  MatchResult mr;
  mr.n_preds = static_cast<int>(preds.size());
  for (const auto& g : gts)
    if (g.legible) ++mr.n_valid_gts;

  struct Cand {
    double iou;
    int pred, gt;
  };
  std::vector<Cand> cands;
  for (int p = 0; p < static_cast<int>(preds.size()); ++p)
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      if (!gts[g].legible) continue;
      const double v = polygon_iou(preds[p].polygon, gts[g].polygon);
      if (v >= iou_threshold) cands.push_back({v, p, g});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });
  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  for (const auto& c : cands) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = 1;
    mr.pairs.emplace_back(c.pred, c.gt);
  }
  // Unmatched predictions sitting on do-not-care regions are absorbed.
  for (int p = 0; p < static_cast<int>(preds.size()); ++p) {
    if (pred_used[p]) continue;
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      if (gts[g].legible) continue;
      if (polygon_iou(preds[p].polygon, gts[g].polygon) >= iou_threshold) {
        mr.absorbed_preds.push_back(p);
        break;
      }
    }
  }
  mr.n_valid_preds = mr.n_preds - static_cast<int>(mr.absorbed_preds.size());
  return mr;
}

PRH compute_hmean(int matches, int valid_preds, int valid_gts) {
  PRH r;
  r.precision = valid_preds > 0 ? static_cast<double>(matches) / valid_preds : 0.0;
  r.recall = valid_gts > 0 ? static_cast<double>(matches) / valid_gts : 0.0;
  const double s = r.precision + r.recall;
  r.hmean = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

int edit_distance(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::None: return "none";
    case Protocol::Full: return "full";
    case Protocol::Strong: return "strong";
    case Protocol::Weak: return "weak";
    case Protocol::Generic: return "generic";
  }
  return "none";
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "none") return Protocol::None;
  if (name == "full") return Protocol::Full;
  if (name == "strong") return Protocol::Strong;
  if (name == "weak") return Protocol::Weak;
  if (name == "generic") return Protocol::Generic;
  throw ConfigError("unknown lexicon protocol: " + name);
}

std::string normalize_transcription(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c >= 'a' && c <= 'z') out.push_back(static_cast<char>(c - 'a' + 'A'));
    else if ((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) out.push_back(c);
  }
  return out;
}

std::string lexicon_correct(const std::string& word, const Lexicon& lex) {
  if (lex.protocol == Protocol::None) return word;
  if (lex.words.empty())
    throw ConfigError(str_cat("empty lexicon for protocol ",
                              protocol_name(lex.protocol)));
  const std::string folded = normalize_transcription(word);
  int best = -1;
  std::string best_word;
  for (const auto& w : lex.words) {
    const int d = edit_distance(folded, normalize_transcription(w));
    if (best < 0 || d < best) {  // ties: earlier lexicon entry wins
      best = d;
      best_word = normalize_transcription(w);
    }
  }
  if (lex.max_distance >= 0 && best > lex.max_distance) return folded;
  return best_word;
}

E2ECounts end_to_end_score(const std::vector<Prediction>& preds,
                           const std::vector<datagen::TextInstanceGT>& gts,
                           const Lexicon& lexicon, double iou_threshold) {
  const MatchResult mr = match_detections(preds, gts, iou_threshold);
  E2ECounts c;
  c.valid_preds = mr.n_valid_preds;
  c.valid_gts = mr.n_valid_gts;
  for (const auto& [p, g] : mr.pairs) {
    const std::string corrected =
        normalize_transcription(lexicon_correct(preds[p].transcription, lexicon));
    if (corrected == normalize_transcription(gts[g].transcription)) ++c.correct;
  }
  return c;
}

Lexicon LexiconSet::for_image(Protocol p, const std::string& sample_id) const {
  Lexicon lex;
  lex.protocol = p;
  switch (p) {
    case Protocol::None:
      break;
    case Protocol::Full: {
      auto it = full.find(sample_id);
      if (it == full.end())
        throw ConfigError("no full lexicon for sample " + sample_id);
      lex.words = it->second;
      break;
    }
    case Protocol::Strong: {
      auto it = strong.find(sample_id);
      if (it == strong.end())
        throw ConfigError("no strong lexicon for sample " + sample_id);
      lex.words = it->second;
      break;
    }
    case Protocol::Weak:
      lex.words = weak;
      break;
    case Protocol::Generic:
      lex.words = generic;
      break;
  }
  return lex;
}

namespace {

std::string pseudo_word(Rng& rng) {
  const int len = static_cast<int>(rng.uniform_int(2, 6));
  std::string w;
  for (int i = 0; i < len; ++i)
    w.push_back(datagen::kAlphabet[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(datagen::kAlphabet.size()) - 1))]);
  return w;
}

void append_unique(std::vector<std::string>& words, const std::string& w) {
  if (std::find(words.begin(), words.end(), w) == words.end())
    words.push_back(w);
}

}  // namespace

LexiconSet build_lexicons(const std::vector<datagen::SceneSample>& samples,
                          std::uint64_t seed, int strong_size,
                          int generic_size) {
  LexiconSet out;
  Rng rng(seed ^ 0x5dce3bd3a1c150f1ull);
  for (const auto& s : samples) {
    std::vector<std::string> words;
    for (const auto& inst : s.instances)
      if (inst.legible) append_unique(words, inst.transcription);
    out.full[s.sample_id] = words;
    for (const auto& w : words) append_unique(out.weak, w);

    std::vector<std::string> strong = words;
    while (static_cast<int>(strong.size()) < strong_size)
      append_unique(strong, pseudo_word(rng));
    out.strong[s.sample_id] = strong;
  }
  out.generic = out.weak;
  while (static_cast<int>(out.generic.size()) < generic_size)
    append_unique(out.generic, pseudo_word(rng));
  return out;
}

void write_lexicons(const LexiconSet& lex, const std::string& dir) {
  auto write_words = [](const std::string& path,
                        const std::vector<std::string>& words) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& w : words) f << w << "\n";
  };
  fs::create_directories(fs::path(dir) / "full");
  fs::create_directories(fs::path(dir) / "strong");
  for (const auto& [id, words] : lex.full)
    write_words((fs::path(dir) / "full" / (id + ".txt")).string(), words);
  for (const auto& [id, words] : lex.strong)
    write_words((fs::path(dir) / "strong" / (id + ".txt")).string(), words);
  write_words((fs::path(dir) / "weak.txt").string(), lex.weak);
  write_words((fs::path(dir) / "generic.txt").string(), lex.generic);
}

LexiconSet load_lexicons(const std::string& dir) {
  auto read_words = [](const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("missing lexicon file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) out.push_back(line);
    return out;
  };
  LexiconSet lex;
  for (const auto& entry : fs::directory_iterator(fs::path(dir) / "full"))
    lex.full[entry.path().stem().string()] = read_words(entry.path().string());
  for (const auto& entry : fs::directory_iterator(fs::path(dir) / "strong"))
    lex.strong[entry.path().stem().string()] = read_words(entry.path().string());
  lex.weak = read_words((fs::path(dir) / "weak.txt").string());
  lex.generic = read_words((fs::path(dir) / "generic.txt").string());
  return lex;
}

EvalReport evaluate(
    const std::vector<std::vector<Prediction>>& preds_per_image,
    const std::vector<datagen::SceneSample>& samples, const LexiconSet& lex,
    const std::vector<Protocol>& protocols, double iou_threshold) {
  if (preds_per_image.size() != samples.size())
    throw ConfigError("evaluate: one prediction list per sample required");
  EvalReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const MatchResult mr =
        match_detections(preds_per_image[i], samples[i].instances, iou_threshold);
    report.detection_matches += static_cast<int>(mr.pairs.size());
    report.valid_preds += mr.n_valid_preds;
    report.valid_gts += mr.n_valid_gts;
  }
  report.detection =
      compute_hmean(report.detection_matches, report.valid_preds, report.valid_gts);

  bool first_protocol = true;
  for (Protocol p : protocols) {
    int correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Lexicon lexicon = lex.for_image(p, samples[i].sample_id);
      const MatchResult mr =
          match_detections(preds_per_image[i], samples[i].instances, iou_threshold);
      for (const auto& [pi, gi] : mr.pairs) {
        const std::string corrected = normalize_transcription(
            lexicon_correct(preds_per_image[i][pi].transcription, lexicon));
        const std::string truth =
            normalize_transcription(samples[i].instances[gi].transcription);
        const bool ok = corrected == truth;
        if (ok) ++correct;
        if (first_protocol) {
          PairRecord rec;
          rec.sample_id = samples[i].sample_id;
          rec.pred_index = pi;
          rec.gt_index = gi;
          rec.iou = polygon_iou(preds_per_image[i][pi].polygon,
                                samples[i].instances[gi].polygon);
          rec.predicted = preds_per_image[i][pi].transcription;
          rec.corrected = corrected;
          rec.ground_truth = samples[i].instances[gi].transcription;
          rec.text_correct = ok;
          report.pairs.push_back(std::move(rec));
        }
      }
    }
    report.end_to_end[protocol_name(p)] =
        compute_hmean(correct, report.valid_preds, report.valid_gts);
    first_protocol = false;
  }
  return report;
}

void write_report(const EvalReport& report, const std::string& path) {
  json j;
  j["detection"] = {{"precision", report.detection.precision},
                    {"recall", report.detection.recall},
                    {"hmean", report.detection.hmean},
                    {"matches", report.detection_matches},
                    {"valid_predictions", report.valid_preds},
                    {"valid_ground_truths", report.valid_gts}};
  j["end_to_end"] = json::object();
  for (const auto& [name, prh] : report.end_to_end)
    j["end_to_end"][name] = {{"precision", prh.precision},
                             {"recall", prh.recall},
                             {"hmean", prh.hmean}};
  j["matched_pairs"] = json::array();
  for (const auto& p : report.pairs)
    j["matched_pairs"].push_back({{"sample", p.sample_id},
                                  {"pred", p.pred_index},
                                  {"gt", p.gt_index},
                                  {"iou", p.iou},
                                  {"predicted", p.predicted},
                                  {"corrected", p.corrected},
                                  {"ground_truth", p.ground_truth},
                                  {"text_correct", p.text_correct}});
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report: " + path);
  f << j.dump(2) << "\n";
}

std::string render_report(const EvalReport& report) {
  std::ostringstream os;
  os << "detection: P=" << report.detection.precision
     << " R=" << report.detection.recall << " H=" << report.detection.hmean
     << " (" << report.detection_matches << "/" << report.valid_preds << "/"
     << report.valid_gts << " match/pred/gt)\n";
  for (const auto& [name, prh] : report.end_to_end)
    os << "end-to-end[" << name << "]: P=" << prh.precision
       << " R=" << prh.recall << " H=" << prh.hmean << "\n";
  return os.str();
}

void write_predictions(const std::string& path,
                       const std::vector<Prediction>& preds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  char buf[64];
  for (const auto& p : preds) {
    std::string line;
    for (std::size_t i = 0; i < p.polygon.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.polygon[i].x);
      line += buf;
      line += ',';
      std::snprintf(buf, sizeof(buf), "%.17g", p.polygon[i].y);
      line += buf;
      if (i + 1 < p.polygon.size()) line += ',';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", p.confidence);
    f << line << "\t" << p.transcription << "\t" << buf << "\n";
  }
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("missing predictions file: " + path);
  std::vector<Prediction> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> tabs;
    std::string cur;
    for (char c : line) {
      if (c == '\t') {
        tabs.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    tabs.push_back(cur);
    if (tabs.size() != 3)
      throw ParseError(str_cat(path, ": line ", line_no,
                               ": expected coords<TAB>text<TAB>confidence"));
    Prediction p;
    std::stringstream ss(tabs[0]);
    std::string tok;
    std::vector<double> coords;
    while (std::getline(ss, tok, ',')) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw ParseError(str_cat(path, ": line ", line_no,
                                 ": bad coordinate '", tok, "'"));
      coords.push_back(v);
    }
    if (coords.size() < 8 || coords.size() % 2 != 0)
      throw ParseError(str_cat(path, ": line ", line_no,
                               ": expected >= 4 coordinate pairs"));
    for (std::size_t i = 0; i < coords.size(); i += 2)
      p.polygon.push_back({coords[i], coords[i + 1]});
    p.transcription = tabs[1];
    char* end = nullptr;
    p.confidence = std::strtod(tabs[2].c_str(), &end);
    if (end == tabs[2].c_str())
      throw ParseError(str_cat(path, ": line ", line_no, ": bad confidence"));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace stspot::evalkit
