#ifndef STSPOT_DATAGEN_HPP_
#define STSPOT_DATAGEN_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stspot/geometry.hpp"
#include "stspot/image_io.hpp"

namespace stspot::datagen {

/// Case-insensitive 36-symbol alphabet; the decoder appends EOS and PAD.
inline const std::string kAlphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

struct TextInstanceGT {
  geom::Polygon polygon;  // >= 4 points, simple, positive area
  std::string transcription;
  bool legible = true;
};

struct SceneSample {
  Image image;
  std::vector<TextInstanceGT> instances;
  std::string sample_id;
};

struct GlyphBitmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> on;  // row-major, 0/1
  bool at(int y, int x) const { return on[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Nearest-neighbor scaled rendering from the embedded 5x7 bitmap font.
GlyphBitmap render_glyph(char c, int height_px);
/// The raw 5x7 rows for a symbol (bit 4 = leftmost column).
const std::uint8_t* font_rows(char c);

struct GenConfig {
  int height = 64;
  int width = 64;
  int min_instances = 1;
  int max_instances = 2;
  int min_word_len = 1;
  int max_word_len = 5;
  double min_glyph_height = 10.0;
  double max_glyph_height = 16.0;
  double max_rotation_deg = 15.0;
  double max_arc_sweep = 0.5;  // radians of baseline bend; 0 disables curves
  double clutter_density = 1.5;  // shapes per 64x64 tile
  double illegible_prob = 0.0;   // emit "###"-style do-not-care instances
  int placement_retries = 25;
  double max_pair_iou = 0.05;
  std::string alphabet = kAlphabet;

  void validate() const;
};

/// Pure function of (config, seed): identical inputs give byte-identical
/// images and annotations.
SceneSample synthesize_sample(const GenConfig& config, std::uint64_t seed);

struct AnnotationSpec {
  std::string alphabet = kAlphabet;
  int max_transcription_len = 32;
};

/// "x1,y1,x2,y2,x3,y3,x4,y4,transcription"; "###" marks do-not-care.
TextInstanceGT parse_icdar_quad(const std::string& line,
                                const AnnotationSpec& spec, int line_no);
/// "x1,y1,...,xn,yn,transcription" with n >= 4, simple polygon.
TextInstanceGT parse_polygon_annotation(const std::string& line,
                                        const AnnotationSpec& spec,
                                        int line_no);

std::string format_annotation_line(const TextInstanceGT& gt);

struct DatasetManifest {
  std::string root;
  std::string format;  // "quad" | "polygon"
  std::string alphabet = kAlphabet;
  std::optional<std::uint64_t> seed;
  struct Entry {
    std::string sample_id;
    std::string image_file;
    std::string annotation_file;
    std::uint64_t image_fnv = 0;
    std::uint64_t annotation_fnv = 0;
  };
  std::vector<Entry> entries;
};

/// Writes images/, annots/ and manifest.json under `dir`.
DatasetManifest write_dataset(const std::string& dir,
                              const std::vector<SceneSample>& samples,
                              const std::string& format,
                              std::optional<std::uint64_t> seed = std::nullopt);

DatasetManifest read_manifest(const std::string& manifest_path);
std::vector<SceneSample> load_dataset(const std::string& manifest_path);

/// SceneSample invariants: bounds, stride multiple, instance validity.
void validate_sample(const SceneSample& s, const std::string& alphabet);

}  // namespace stspot::datagen

#endif  // STSPOT_DATAGEN_HPP_
