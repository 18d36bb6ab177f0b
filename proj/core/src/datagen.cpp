#include "stspot/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stspot/common.hpp"
#include "stspot/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stspot::datagen {

// 5x7 bitmap font, one byte per row, bit 4 = leftmost column.
// Symbols 0-9 then A-Z.
static const std::uint8_t kFont[36][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
    {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11},  // N
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
    {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},  // Y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
};

static int font_index(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'Z') return 10 + (c - 'A');
  if (c >= 'a' && c <= 'z') return 10 + (c - 'a');
  return -1;
}

const std::uint8_t* font_rows(char c) {
  const int idx = font_index(c);
  if (idx < 0) throw Error(str_cat("character '", c, "' not in alphabet"));
  return kFont[idx];
}

GlyphBitmap render_glyph(char c, int height_px) {
  const int idx = font_index(c);
  if (idx < 0) throw Error(str_cat("character '", c, "' not in alphabet"));
  if (height_px < 7)
    throw Error(str_cat("glyph height ", height_px, " below minimum 7"));
  GlyphBitmap g;
  g.height = height_px;
  g.width = (height_px * 5) / 7;
  if (g.width < 5) g.width = 5;
  g.on.assign(static_cast<std::size_t>(g.height) * g.width, 0);
  for (int y = 0; y < g.height; ++y) {
    const int sy = y * 7 / g.height;
    const std::uint8_t row = kFont[idx][sy];
    for (int x = 0; x < g.width; ++x) {
      const int sx = x * 5 / g.width;
      g.on[static_cast<std::size_t>(y) * g.width + x] =
          (row >> (4 - sx)) & 1 ? 1 : 0;
    }
  }
  return g;
}

void GenConfig::validate() const {
  if (height % 32 != 0 || width % 32 != 0)
    throw ConfigError("generator image size must be a multiple of 32");
  if (min_instances < 0 || max_instances < min_instances)
    throw ConfigError("bad instance count range");
  if (min_word_len < 1 || max_word_len < min_word_len)
    throw ConfigError("bad word length range");
  if (min_glyph_height < 7.0)
    throw ConfigError("glyph height below the 7px font minimum");
  if (alphabet.empty()) throw ConfigError("empty alphabet");
  for (std::size_t i = 0; i < alphabet.size(); ++i)
    for (std::size_t j = i + 1; j < alphabet.size(); ++j)
      if (alphabet[i] == alphabet[j])
        throw ConfigError("alphabet contains duplicate symbols");
}

namespace {

struct GlyphPlacement {
  GlyphBitmap bitmap;
  double cx, cy;     // center in image coordinates
  double angle;      // clockwise-positive in image (y-down) coordinates
};

struct InstanceLayout {
  geom::Polygon polygon;
  std::vector<GlyphPlacement> glyphs;
  std::string word;
};

// Lay out `word` as a straight or arc baseline centered at the origin, then
// rotate by `theta` and translate to (cx, cy).
InstanceLayout layout_instance(const std::string& word, int glyph_h,
                               double theta, double sweep, double cx,
                               double cy) {
  InstanceLayout out;
  out.word = word;
  const int k = static_cast<int>(word.size());
  std::vector<GlyphBitmap> bitmaps;
  bitmaps.reserve(k);
  double total_w = 0.0;
  const double gap = std::max(1.0, glyph_h / 7.0);
  for (char c : word) {
    bitmaps.push_back(render_glyph(c, glyph_h));
    total_w += bitmaps.back().width + gap;
  }
  total_w -= gap;
  const double pad = std::max(2.0, glyph_h / 6.0);
  const double half_h = glyph_h / 2.0 + pad;

  auto place = [&](double lx, double ly, double local_angle) {
    const double ct = std::cos(theta), st = std::sin(theta);
    return GlyphPlacement{GlyphBitmap{}, cx + lx * ct - ly * st,
                          cy + lx * st + ly * ct, theta + local_angle};
  };
  auto map_pt = [&](double lx, double ly) {
    const double ct = std::cos(theta), st = std::sin(theta);
    return geom::Point{cx + lx * ct - ly * st, cy + lx * st + ly * ct};
  };

  if (std::abs(sweep) < 0.05 || k < 2) {
    // Straight baseline. Polygon is the padded rectangle.
    double x = -total_w / 2.0;
    for (int i = 0; i < k; ++i) {
      const double gcx = x + bitmaps[i].width / 2.0;
      GlyphPlacement gp = place(gcx, 0.0, 0.0);
      gp.bitmap = std::move(bitmaps[i]);
      x += gp.bitmap.width + gap;
      out.glyphs.push_back(std::move(gp));
    }
    const double hw = total_w / 2.0 + pad;
    out.polygon = {map_pt(-hw, -half_h), map_pt(hw, -half_h),
                   map_pt(hw, half_h), map_pt(-hw, half_h)};
    return out;
  }

  // Arc baseline: radius from arc length, glyph centers at equal arc steps.
  const double radius = total_w / std::abs(sweep);
  const double dir = sweep > 0 ? 1.0 : -1.0;
  // Circle center sits above (dir>0) or below the baseline midpoint.
  std::vector<double> boundary_angles;
  double s = 0.0;
  std::vector<double> centers_s;
  boundary_angles.push_back(0.0);
  for (int i = 0; i < k; ++i) {
    centers_s.push_back(s + bitmaps[i].width / 2.0);
    s += bitmaps[i].width + (i + 1 < k ? gap : 0.0);
    boundary_angles.push_back(std::min(s, total_w));
  }
  auto arc_angle = [&](double arc_s) {
    return (arc_s - total_w / 2.0) / radius;  // centered sweep
  };
  // Local frame before rotation: baseline midpoint at origin, circle center
  // at (0, -dir*radius) (y-down means dir>0 curves the text upward).
  auto arc_point = [&](double arc_s, double r_off) {
    const double a = arc_angle(arc_s);
    const double r = radius + dir * r_off;
    return std::pair<double, double>{r * std::sin(a),
                                     -dir * radius + dir * r * std::cos(a)};
  };
  for (int i = 0; i < k; ++i) {
    auto [lx, ly] = arc_point(centers_s[i], 0.0);
    GlyphPlacement gp = place(lx, ly, dir * arc_angle(centers_s[i]));
    gp.bitmap = std::move(bitmaps[i]);
    out.glyphs.push_back(std::move(gp));
  }
  // Annular-sector polygon: outer boundary forward, inner boundary back.
  for (std::size_t i = 0; i < boundary_angles.size(); ++i) {
    auto [lx, ly] = arc_point(boundary_angles[i], half_h);
    out.polygon.push_back(map_pt(lx, ly));
  }
  for (std::size_t i = boundary_angles.size(); i-- > 0;) {
    auto [lx, ly] = arc_point(boundary_angles[i], -half_h);
    out.polygon.push_back(map_pt(lx, ly));
  }
  return out;
}

void render_instance(Image& img, const InstanceLayout& layout, double value,
                     const double* tint) {
  for (const auto& gp : layout.glyphs) {
    const double ca = std::cos(gp.angle), sa = std::sin(gp.angle);
    const double hw = gp.bitmap.width / 2.0, hh = gp.bitmap.height / 2.0;
    const double radius = std::sqrt(hw * hw + hh * hh) + 1.0;
    const int x_lo = std::max(0, static_cast<int>(std::floor(gp.cx - radius)));
    const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(gp.cx + radius)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(gp.cy - radius)));
    const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(gp.cy + radius)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        // Inverse-rotate the pixel center into glyph-local coordinates.
        const double dx = (x + 0.5) - gp.cx;
        const double dy = (y + 0.5) - gp.cy;
        const double lx = dx * ca + dy * sa + hw;
        const double ly = -dx * sa + dy * ca + hh;
        const int bx = static_cast<int>(std::floor(lx));
        const int by = static_cast<int>(std::floor(ly));
        if (bx < 0 || bx >= gp.bitmap.width || by < 0 || by >= gp.bitmap.height)
          continue;
        if (!gp.bitmap.at(by, bx)) continue;
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = std::clamp(value + tint[c], 0.0, 1.0);
      }
  }
}

std::string random_word(Rng& rng, const GenConfig& cfg) {
  const int len =
      static_cast<int>(rng.uniform_int(cfg.min_word_len, cfg.max_word_len));
  std::string w;
  for (int i = 0; i < len; ++i)
    w.push_back(cfg.alphabet[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.alphabet.size()) - 1))]);
  return w;
}

bool polygon_in_bounds(const geom::Polygon& p, int w, int h) {
  for (const auto& q : p)
    if (q.x < 1.0 || q.y < 1.0 || q.x > w - 1.0 || q.y > h - 1.0) return false;
  return true;
}

}  // namespace

SceneSample synthesize_sample(const GenConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);

  SceneSample sample;
  sample.sample_id = str_cat("synth_", seed);
  sample.image = Image::create(config.height, config.width);
  Image& img = sample.image;

  // Background: soft gradient plus uniform noise, darker than the glyphs.
  const double base = rng.uniform(0.15, 0.42);
  const double grad = rng.uniform(-0.08, 0.08);
  double tint[3] = {rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                    rng.uniform(-0.02, 0.02)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = base + grad * (static_cast<double>(y) / img.height) +
                       rng.uniform(-0.03, 0.03);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(v + tint[c], 0.0, 1.0);
    }

  // Clutter: dim rectangles and discs.
  const double tiles = (config.height / 64.0) * (config.width / 64.0);
  const int n_clutter = static_cast<int>(std::lround(config.clutter_density * tiles));
  for (int i = 0; i < n_clutter; ++i) {
    const double cx = rng.uniform(0, config.width);
    const double cy = rng.uniform(0, config.height);
    const double r = rng.uniform(2.0, 7.0);
    const double v = rng.uniform(0.05, 0.55);
    const bool disc = rng.uniform() < 0.5;
    const int x_lo = std::max(0, static_cast<int>(cx - r));
    const int x_hi = std::min(img.width - 1, static_cast<int>(cx + r));
    const int y_lo = std::max(0, static_cast<int>(cy - r));
    const int y_hi = std::min(img.height - 1, static_cast<int>(cy + r));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        if (disc) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (dx * dx + dy * dy > r * r) continue;
        }
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(v + tint[c], 0.0, 1.0);
      }
  }

  // Text instances: placement with bounded retries, pairwise IoU kept low.
  const int target = static_cast<int>(
      rng.uniform_int(config.min_instances, config.max_instances));
  for (int inst = 0; inst < target; ++inst) {
    bool placed = false;
    for (int attempt = 0; attempt < config.placement_retries && !placed;
         ++attempt) {
      const std::string word = random_word(rng, config);
      const int glyph_h = static_cast<int>(rng.uniform_int(
          static_cast<std::int64_t>(config.min_glyph_height),
          static_cast<std::int64_t>(config.max_glyph_height)));
      const double theta =
          rng.uniform(-config.max_rotation_deg, config.max_rotation_deg) *
          M_PI / 180.0;
      double sweep = config.max_arc_sweep > 0.0
                         ? rng.uniform(-config.max_arc_sweep, config.max_arc_sweep)
                         : 0.0;
      const double cx = rng.uniform(0.15 * config.width, 0.85 * config.width);
      const double cy = rng.uniform(0.15 * config.height, 0.85 * config.height);

      InstanceLayout layout = layout_instance(word, glyph_h, theta, sweep, cx, cy);
      if (!polygon_in_bounds(layout.polygon, config.width, config.height))
        continue;
      if (!geom::is_simple(layout.polygon)) continue;
      bool overlaps = false;
      for (const auto& other : sample.instances)
        if (geom::iou(layout.polygon, other.polygon) >= config.max_pair_iou) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;

      const double glyph_value = rng.uniform(0.72, 0.98);
      double glyph_tint[3] = {rng.uniform(-0.05, 0.02), rng.uniform(-0.05, 0.02),
                              rng.uniform(-0.05, 0.02)};
      render_instance(img, layout, glyph_value, glyph_tint);

      TextInstanceGT gt;
      gt.polygon = layout.polygon;
      const bool illegible = rng.uniform() < config.illegible_prob;
      gt.legible = !illegible;
      gt.transcription = illegible ? std::string() : word;
      sample.instances.push_back(std::move(gt));
      placed = true;
    }
    // Infeasible placement after bounded retries: instance dropped.
  }

  img.quantize();
  return sample;
}

// ---------------------------------------------------------------------------
// parsers
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_coord(const std::string& field, int line_no, int field_idx) {
  char* end = nullptr;
  const std::string trimmed = field;
  const double v = std::strtod(trimmed.c_str(), &end);
  if (end == trimmed.c_str() || *end != '\0')
    throw ParseError(str_cat("line ", line_no, ": field ", field_idx + 1,
                             " ('", field, "') is not a number"));
  return v;
}

}  // namespace

static TextInstanceGT parse_line_common(const std::string& line,
                                        const AnnotationSpec& spec, int line_no,
                                        int required_points) {
  const auto fields = split_fields(line);
  const int n_fields = static_cast<int>(fields.size());
  if (required_points > 0) {
    if (n_fields != 2 * required_points + 1)
      throw ParseError(str_cat("line ", line_no, ": expected ",
                               2 * required_points + 1, " fields, got ",
                               n_fields));
  } else {
    if (n_fields < 9 || n_fields % 2 == 0)
      throw ParseError(str_cat(
          "line ", line_no,
          ": expected an even coordinate count (>= 8) plus transcription, got ",
          n_fields, " fields"));
  }
  const int n_coords = n_fields - 1;
  TextInstanceGT gt;
  for (int i = 0; i < n_coords; i += 2) {
    const double x = parse_coord(fields[i], line_no, i);
    const double y = parse_coord(fields[i + 1], line_no, i + 1);
    gt.polygon.push_back({x, y});
  }
  const std::string& raw = fields.back();
  if (raw == "###") {
    gt.legible = false;
    gt.transcription.clear();
  } else {
    gt.legible = true;
    std::string folded;
    for (char c : raw) {
      char u = c;
      if (u >= 'a' && u <= 'z') u = static_cast<char>(u - 'a' + 'A');
      if (spec.alphabet.find(u) == std::string::npos)
        throw ParseError(str_cat("line ", line_no, ": character '", c,
                                 "' not in the configured alphabet"));
      folded.push_back(u);
    }
    gt.transcription = folded;
    if (gt.transcription.empty())
      throw ParseError(str_cat("line ", line_no, ": empty transcription"));
    if (static_cast<int>(gt.transcription.size()) > spec.max_transcription_len)
      throw ParseError(str_cat("line ", line_no, ": transcription longer than ",
                               spec.max_transcription_len));
  }
  if (!geom::is_simple(gt.polygon))
    throw ParseError(str_cat("line ", line_no, ": polygon is self-intersecting",
                             " or degenerate"));
  if (geom::area(gt.polygon) <= 0.0)
    throw ParseError(str_cat("line ", line_no, ": polygon area is zero"));
  return gt;
}

TextInstanceGT parse_icdar_quad(const std::string& line,
                                const AnnotationSpec& spec, int line_no) {
  return parse_line_common(line, spec, line_no, 4);
}

TextInstanceGT parse_polygon_annotation(const std::string& line,
                                        const AnnotationSpec& spec,
                                        int line_no) {
  return parse_line_common(line, spec, line_no, 0);
}

std::string format_annotation_line(const TextInstanceGT& gt) {
  std::string out;
  char buf[64];
  for (const auto& p : gt.polygon) {
    std::snprintf(buf, sizeof(buf), "%.17g", p.x);
    out += buf;
    out += ',';
    std::snprintf(buf, sizeof(buf), "%.17g", p.y);
    out += buf;
    out += ',';
  }
  out += gt.legible ? gt.transcription : "###";
  return out;
}

// ---------------------------------------------------------------------------
// dataset io
// ---------------------------------------------------------------------------

namespace {

std::uint64_t file_fnv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing file: " + path);
  std::string contents((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  return fnv1a64(contents.data(), contents.size());
}

}  // namespace

DatasetManifest write_dataset(const std::string& dir,
                              const std::vector<SceneSample>& samples,
                              const std::string& format,
                              std::optional<std::uint64_t> seed) {
  if (format != "quad" && format != "polygon")
    throw ConfigError("dataset format must be 'quad' or 'polygon'");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "annots");

  DatasetManifest m;
  m.root = ".";
  m.format = format;
  m.seed = seed;
  for (const auto& s : samples) {
    if (format == "quad")
      for (const auto& inst : s.instances)
        if (inst.polygon.size() != 4)
          throw ConfigError(str_cat("sample ", s.sample_id,
                                    " has a non-quad polygon; use the polygon",
                                    " format"));
    DatasetManifest::Entry e;
    e.sample_id = s.sample_id;
    e.image_file = "images/" + s.sample_id + ".ppm";
    e.annotation_file = "annots/" + s.sample_id + ".txt";
    const std::string img_path = (fs::path(dir) / e.image_file).string();
    const std::string ann_path = (fs::path(dir) / e.annotation_file).string();
    write_ppm(img_path, s.image);
    {
      std::ofstream f(ann_path, std::ios::binary);
      if (!f) throw IoError("cannot open for writing: " + ann_path);
      for (const auto& inst : s.instances)
        f << format_annotation_line(inst) << "\n";
    }
    e.image_fnv = file_fnv(img_path);
    e.annotation_fnv = file_fnv(ann_path);
    m.entries.push_back(std::move(e));
  }

  json j;
  j["root"] = m.root;
  j["format"] = m.format;
  j["alphabet"] = m.alphabet;
  if (m.seed) j["seed"] = *m.seed;
  j["entries"] = json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"id", e.sample_id},
                            {"image", e.image_file},
                            {"annotation", e.annotation_file},
                            {"image_fnv", e.image_fnv},
                            {"annotation_fnv", e.annotation_fnv}});
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << j.dump(2) << "\n";
  return m;
}

DatasetManifest read_manifest(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("missing file: " + manifest_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ParseError(str_cat("manifest ", manifest_path, ": ", e.what()));
  }
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.format = j.at("format").get<std::string>();
  m.alphabet = j.at("alphabet").get<std::string>();
  if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
  if (m.format != "quad" && m.format != "polygon")
    throw ParseError("manifest format must be 'quad' or 'polygon'");
  {
    // duplicate-free alphabet invariant
    std::string a = m.alphabet;
    std::sort(a.begin(), a.end());
    if (std::adjacent_find(a.begin(), a.end()) != a.end())
      throw ParseError("manifest alphabet contains duplicates");
  }
  for (const auto& je : j.at("entries")) {
    DatasetManifest::Entry e;
    e.sample_id = je.at("id").get<std::string>();
    e.image_file = je.at("image").get<std::string>();
    e.annotation_file = je.at("annotation").get<std::string>();
    e.image_fnv = je.at("image_fnv").get<std::uint64_t>();
    e.annotation_fnv = je.at("annotation_fnv").get<std::uint64_t>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<SceneSample> load_dataset(const std::string& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path() / m.root;
  AnnotationSpec spec;
  spec.alphabet = m.alphabet;

  std::vector<SceneSample> out;
  for (const auto& e : m.entries) {
    const std::string img_path = (base / e.image_file).string();
    const std::string ann_path = (base / e.annotation_file).string();
    if (!fs::exists(img_path)) throw IoError("missing file: " + img_path);
    if (!fs::exists(ann_path)) throw IoError("missing file: " + ann_path);
    if (file_fnv(img_path) != e.image_fnv)
      throw IoError("checksum mismatch: " + img_path);
    if (file_fnv(ann_path) != e.annotation_fnv)
      throw IoError("checksum mismatch: " + ann_path);

    SceneSample s;
    s.sample_id = e.sample_id;
    s.image = read_ppm(img_path);
    std::ifstream f(ann_path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        s.instances.push_back(m.format == "quad"
                                  ? parse_icdar_quad(line, spec, line_no)
                                  : parse_polygon_annotation(line, spec, line_no));
      } catch (const ParseError& pe) {
        throw ParseError(str_cat(ann_path, ": ", pe.what()));
      }
    }
    validate_sample(s, m.alphabet);
    out.push_back(std::move(s));
  }
  return out;
}

void validate_sample(const SceneSample& s, const std::string& alphabet) {
  if (s.image.height % 32 != 0 || s.image.width % 32 != 0)
    throw Error(str_cat("sample ", s.sample_id,
                        ": image size must be a multiple of 32"));
  for (const auto& inst : s.instances) {
    if (inst.polygon.size() < 4)
      throw Error(str_cat("sample ", s.sample_id, ": polygon with fewer than 4",
                          " vertices"));
    for (const auto& p : inst.polygon)
      if (p.x < 0 || p.y < 0 || p.x > s.image.width || p.y > s.image.height)
        throw Error(str_cat("sample ", s.sample_id,
                            ": polygon vertex outside image bounds"));
    if (!geom::is_simple(inst.polygon))
      throw Error(str_cat("sample ", s.sample_id, ": non-simple polygon"));
    if (inst.legible) {
      if (inst.transcription.empty())
        throw Error(str_cat("sample ", s.sample_id,
                            ": legible instance with empty transcription"));
      for (char c : inst.transcription)
        if (alphabet.find(c) == std::string::npos)
          throw Error(str_cat("sample ", s.sample_id, ": character '", c,
                              "' outside alphabet"));
    }
  }
}

}  // namespace stspot::datagen
