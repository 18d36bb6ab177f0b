#ifndef STSPOT_EVALKIT_HPP_
#define STSPOT_EVALKIT_HPP_

#include <map>
#include <string>
#include <vector>

#include "stspot/datagen.hpp"
#include "stspot/geometry.hpp"

namespace stspot::evalkit {

struct Prediction {
  geom::Polygon polygon;
  std::string transcription;
  double confidence = 1.0;
};

/// Exact-clipping polygon IoU; degenerate polygons score 0 with a warning.
double polygon_iou(const geom::Polygon& a, const geom::Polygon& b);

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (pred index, gt index)
  std::vector<int> absorbed_preds;         // overlapped only do-not-care GTs
  int n_preds = 0;
  int n_valid_preds = 0;  // preds minus absorbed
  int n_valid_gts = 0;    // legible GTs
};

/// Greedy one-to-one matching by descending IoU against legible GTs;
/// ties broken by lower prediction index, then lower GT index. Unmatched
/// predictions overlapping a do-not-care GT at or above the threshold are
/// absorbed (excluded from the precision denominator).
MatchResult match_detections(const std::vector<Prediction>& preds,
                             const std::vector<datagen::TextInstanceGT>& gts,
                             double iou_threshold = 0.5);

struct PRH {
  double precision = 0.0;
  double recall = 0.0;
  double hmean = 0.0;
};

/// Zero-denominator convention: empty side scores 0.
PRH compute_hmean(int matches, int valid_preds, int valid_gts);

/// Levenshtein distance with unit costs.
int edit_distance(const std::string& a, const std::string& b);

enum class Protocol { None, Full, Strong, Weak, Generic };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

struct Lexicon {
  Protocol protocol = Protocol::None;
  std::vector<std::string> words;  // case-folded
  int max_distance = -1;           // correction ceiling; -1 = unlimited
};

/// None: unchanged. Otherwise the nearest lexicon entry by edit distance
/// (ties: earlier lexicon entry wins), applied only within max_distance.
std::string lexicon_correct(const std::string& word, const Lexicon& lex);

/// Uppercase and keep alphanumerics only; the comparison form for matching.
std::string normalize_transcription(const std::string& s);

struct E2ECounts {
  int correct = 0;
  int valid_preds = 0;
  int valid_gts = 0;
};

/// One image: matched pair counts as correct iff the lexicon-corrected
/// prediction equals the GT transcription after case folding.
E2ECounts end_to_end_score(const std::vector<Prediction>& preds,
                           const std::vector<datagen::TextInstanceGT>& gts,
                           const Lexicon& lexicon, double iou_threshold = 0.5);

/// Word lists per protocol. Full/Strong are per-image; Weak/Generic global.
struct LexiconSet {
  std::map<std::string, std::vector<std::string>> full;    // sample_id -> words
  std::map<std::string, std::vector<std::string>> strong;  // sample_id -> words
  std::vector<std::string> weak;
  std::vector<std::string> generic;

  Lexicon for_image(Protocol p, const std::string& sample_id) const;
};

LexiconSet build_lexicons(const std::vector<datagen::SceneSample>& samples,
                          std::uint64_t seed, int strong_size = 100,
                          int generic_size = 400);
void write_lexicons(const LexiconSet& lex, const std::string& dir);
LexiconSet load_lexicons(const std::string& dir);

struct PairRecord {
  std::string sample_id;
  int pred_index = -1;
  int gt_index = -1;
  double iou = 0.0;
  std::string predicted;
  std::string corrected;
  std::string ground_truth;
  bool text_correct = false;
};

struct EvalReport {
  PRH detection;
  std::map<std::string, PRH> end_to_end;  // protocol name -> scores
  int detection_matches = 0;
  int valid_preds = 0;
  int valid_gts = 0;
  std::vector<PairRecord> pairs;  // audit listing (from the first protocol)
};

EvalReport evaluate(
    const std::vector<std::vector<Prediction>>& preds_per_image,
    const std::vector<datagen::SceneSample>& samples, const LexiconSet& lex,
    const std::vector<Protocol>& protocols, double iou_threshold = 0.5);

void write_report(const EvalReport& report, const std::string& path);
std::string render_report(const EvalReport& report);

// Prediction files: one line per instance,
// "x1,y1,...,xn,yn<TAB>transcription<TAB>confidence".
void write_predictions(const std::string& path,
                       const std::vector<Prediction>& preds);
std::vector<Prediction> read_predictions(const std::string& path);

}  // namespace stspot::evalkit

#endif  // STSPOT_EVALKIT_HPP_
