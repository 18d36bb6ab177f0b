#include "stspot/heads.hpp"

#include <algorithm>
#include <cmath>

#include "stspot/attn_encoder.hpp"

namespace stspot::heads {

using namespace ad;

DetectionHead DetectionHead::create(nn::ParamStore& ps, const HeadsConfig& cfg,
                                    Rng& rng) {
  DetectionHead h;
  h.cfg_ = cfg;
  h.conv1_w = ps.create("heads.det.conv1.w",
                        {cfg.det_hidden, cfg.channels, 3, 3},
                        nn::Init::XavierUniform, rng);
  h.conv1_b = ps.create("heads.det.conv1.b", {cfg.det_hidden}, nn::Init::Zeros, rng);
  h.conv2_w = ps.create("heads.det.conv2.w",
                        {cfg.det_hidden, cfg.det_hidden, 3, 3},
                        nn::Init::XavierUniform, rng);
  h.conv2_b = ps.create("heads.det.conv2.b", {cfg.det_hidden}, nn::Init::Zeros, rng);
  h.head_w = ps.create("heads.det.out.w", {5, cfg.det_hidden, 1, 1},
                       nn::Init::XavierUniform, rng);
  h.head_b = ps.create("heads.det.out.b", {5}, nn::Init::Zeros, rng);
  return h;
}

DenseDetections DetectionHead::forward(const Tensor& p3_image) const {
  if (p3_image.ndim() != 3 || p3_image.dim(0) != cfg_.channels)
    throw ShapeError("DetectionHead: expected (C,H,W) P3 features");
  Tensor x = gelu(conv2d(p3_image, conv1_w, conv1_b, 1, 1));
  x = gelu(conv2d(x, conv2_w, conv2_b, 1, 1));
  Tensor out = conv2d(x, head_w, head_b, 1, 0);  // (5,H,W)
  DenseDetections d;
  d.grid_h = out.dim(1);
  d.grid_w = out.dim(2);
  Tensor tokens = nn::to_tokens(out);  // (cells, 5)
  d.cls_logits = reshape(slice2d(tokens, 1, 0, 1), {d.grid_h * d.grid_w});
  d.reg = slice2d(tokens, 1, 1, 4);
  return d;
}

MaskHead MaskHead::create(nn::ParamStore& ps, const HeadsConfig& cfg, Rng& rng) {
  MaskHead h;
  h.cfg_ = cfg;
  h.conv1_w = ps.create("heads.mask.conv1.w",
                        {cfg.mask_hidden, cfg.channels, 3, 3},
                        nn::Init::XavierUniform, rng);
  h.conv1_b = ps.create("heads.mask.conv1.b", {cfg.mask_hidden}, nn::Init::Zeros, rng);
  h.conv2_w = ps.create("heads.mask.conv2.w",
                        {cfg.mask_hidden, cfg.mask_hidden, 3, 3},
                        nn::Init::XavierUniform, rng);
  h.conv2_b = ps.create("heads.mask.conv2.b", {cfg.mask_hidden}, nn::Init::Zeros, rng);
  h.out_w = ps.create("heads.mask.out.w", {cfg.mask_channels, cfg.mask_hidden, 1, 1},
                      nn::Init::XavierUniform, rng);
  h.out_b = ps.create("heads.mask.out.b", {cfg.mask_channels}, nn::Init::Zeros, rng);
  return h;
}

Tensor MaskHead::forward(const Tensor& roi_feat) const {
  if (roi_feat.ndim() != 3 || roi_feat.dim(0) != cfg_.channels ||
      roi_feat.dim(1) != cfg_.roi_size || roi_feat.dim(2) != cfg_.roi_size)
    throw ShapeError("MaskHead: expected (C,S,S) RoI features");
  Tensor x = gelu(conv2d(roi_feat, conv1_w, conv1_b, 1, 1));
  x = gelu(conv2d(x, conv2_w, conv2_b, 1, 1));
  return conv2d(x, out_w, out_b, 1, 0);
}

RecognitionDecoder RecognitionDecoder::create(nn::ParamStore& ps,
                                              const HeadsConfig& cfg,
                                              Rng& rng) {
  RecognitionDecoder d;
  d.cfg_ = cfg;
  d.queries_ = ps.create("heads.dec.queries", {cfg.max_steps, cfg.channels},
                         nn::Init::Normal02, rng);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    Layer l;
    const std::string p = str_cat("heads.dec.layer", i);
    l.ln_self = nn::LayerNorm::create(ps, p + ".ln_self", cfg.channels, rng);
    l.ln_cross = nn::LayerNorm::create(ps, p + ".ln_cross", cfg.channels, rng);
    l.ln_ff = nn::LayerNorm::create(ps, p + ".ln_ff", cfg.channels, rng);
    l.self_attn = nn::MultiheadAttention::create(ps, p + ".self", cfg.channels,
                                                 cfg.dec_heads, rng);
    l.cross_attn = nn::MultiheadAttention::create(ps, p + ".cross", cfg.channels,
                                                  cfg.dec_heads, rng);
    l.ff1 = nn::Linear::create(ps, p + ".ff1", cfg.channels, cfg.dec_ff, rng);
    l.ff2 = nn::Linear::create(ps, p + ".ff2", cfg.dec_ff, cfg.channels, rng);
    d.layers_.push_back(std::move(l));
  }
  d.final_ln_ = nn::LayerNorm::create(ps, "heads.dec.final_ln", cfg.channels, rng);
  d.out_ = nn::Linear::create(ps, "heads.dec.out", cfg.channels,
                              vocab_size(cfg), rng);
  return d;
}

RecognitionOutput RecognitionDecoder::decode(const Tensor& fused) const {
  if (fused.ndim() != 3 || fused.dim(0) != cfg_.channels)
    throw ShapeError("RecognitionDecoder: expected (C,H,W) fused features");
  const int h = fused.dim(1), w = fused.dim(2);
  Tensor memory = add(nn::to_tokens(fused),
                      nn::to_tokens(encoder::positional_encoding(
                          h, w, cfg_.channels)));
  RecognitionOutput out;
  Tensor x = queries_;
  for (const auto& l : layers_) {
    Tensor ns = l.ln_self.apply(x);
    x = add(x, l.self_attn.apply(ns, ns));
    x = add(x, l.cross_attn.apply(l.ln_cross.apply(x), memory, &out.attn));
    x = add(x, l.ff2.apply(gelu(l.ff1.apply(l.ln_ff.apply(x)))));
  }
  out.step_logits = out_.apply(final_ln_.apply(x));  // (T, V)
  out.step_probs = softmax_rows(out.step_logits);
  const int T = cfg_.max_steps, V = vocab_size(cfg_);
  const int eos = eos_index(cfg_);
  for (int t = 0; t < T; ++t) {
    const double* row = out.step_probs.values().data() +
                        static_cast<std::size_t>(t) * V;
    int best = 0;
    for (int k = 1; k < V; ++k)
      if (row[k] > row[best]) best = k;
    if (best == eos || best == pad_index(cfg_)) break;
    out.decoded.push_back(cfg_.alphabet[best]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// proposals and matching
// ---------------------------------------------------------------------------

geom::Box decode_box_value(double dx, double dy, double dw, double dh, int i,
                           int j, const HeadsConfig& cfg) {
  const double s = cfg.stride;
  const double cx = (j + 0.5) * s + dx * s;
  const double cy = (i + 0.5) * s + dy * s;
  const double w = std::exp(dw) * cfg.base_w;
  const double h = std::exp(dh) * cfg.base_h;
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Tensor decode_box_tensor(const DenseDetections& dets, int cell,
                         const HeadsConfig& cfg) {
  const int i = cell / dets.grid_w, j = cell % dets.grid_w;
  const double s = cfg.stride;
  Tensor row = slice2d(dets.reg, 0, cell, 1);  // (1,4)
  Tensor dx = slice2d(row, 1, 0, 1);
  Tensor dy = slice2d(row, 1, 1, 1);
  Tensor dw = slice2d(row, 1, 2, 1);
  Tensor dh = slice2d(row, 1, 3, 1);
  Tensor cx = add_scalar(scale(dx, s), (j + 0.5) * s);
  Tensor cy = add_scalar(scale(dy, s), (i + 0.5) * s);
  Tensor w_half = scale(exp_t(dw), cfg.base_w * 0.5);
  Tensor h_half = scale(exp_t(dh), cfg.base_h * 0.5);
  Tensor x0 = sub(cx, w_half);
  Tensor y0 = sub(cy, h_half);
  Tensor x1 = add(cx, w_half);
  Tensor y1 = add(cy, h_half);
  return reshape(concat({x0, y0, x1, y1}, 1), {4});
}

std::vector<Proposal> propose_learned(const DenseDetections& dets,
                                      const HeadsConfig& cfg, int topk,
                                      double score_thresh, double nms_iou,
                                      double img_w, double img_h) {
  const int cells = dets.grid_h * dets.grid_w;
  if (topk > cells) {
    warn(str_cat("propose: top-k ", topk, " exceeds cell count ", cells,
                 "; clipping"));
    topk = cells;
  }
  struct Scored {
    double score;
    int cell;
  };
  std::vector<Scored> scored;
  for (int c = 0; c < cells; ++c) {
    const double logit = dets.cls_logits.values()[c];
    const double score = 1.0 / (1.0 + std::exp(-logit));
    if (score >= score_thresh) scored.push_back({score, c});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.cell < b.cell;  // row-major tie-break
  });
  if (static_cast<int>(scored.size()) > topk) scored.resize(topk);

  std::vector<Proposal> kept;
  for (const auto& s : scored) {
    const int i = s.cell / dets.grid_w, j = s.cell % dets.grid_w;
    const double* r = dets.reg.values().data() + static_cast<std::size_t>(s.cell) * 4;
    geom::Box b = decode_box_value(r[0], r[1], r[2], r[3], i, j, cfg);
    b.x0 = std::clamp(b.x0, 0.0, img_w);
    b.y0 = std::clamp(b.y0, 0.0, img_h);
    b.x1 = std::clamp(b.x1, 0.0, img_w);
    b.y1 = std::clamp(b.y1, 0.0, img_h);
    if (b.width() < 2.0 || b.height() < 2.0) continue;
    bool suppressed = false;
    for (const auto& k : kept)
      if (geom::box_iou(k.box, b) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back({b, s.score});
  }
  return kept;
}

std::vector<Proposal> propose_gt_guided(
    const std::vector<datagen::TextInstanceGT>& gts, double jitter, Rng& rng,
    double img_w, double img_h) {
  std::vector<Proposal> out;
  for (const auto& gt : gts) {
    geom::Box b = geom::bounding_box(gt.polygon);
    const double w = b.width(), h = b.height();
    if (jitter > 0.0) {
      b.x0 += rng.uniform(-jitter, jitter) * w;
      b.y0 += rng.uniform(-jitter, jitter) * h;
      b.x1 += rng.uniform(-jitter, jitter) * w;
      b.y1 += rng.uniform(-jitter, jitter) * h;
    }
    b.x0 = std::clamp(b.x0, 0.0, img_w - 2.0);
    b.y0 = std::clamp(b.y0, 0.0, img_h - 2.0);
    b.x1 = std::clamp(b.x1, b.x0 + 2.0, img_w);
    b.y1 = std::clamp(b.y1, b.y0 + 2.0, img_h);
    out.push_back({b, 1.0});
  }
  return out;
}

std::vector<int> match_proposals_to_gt(const std::vector<Proposal>& proposals,
                                       const std::vector<geom::Box>& gt_boxes,
                                       double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw ConfigError("match_proposals_to_gt: threshold must be in (0,1)");
  struct Cand {
    double iou;
    int prop, gt;
  };
  std::vector<Cand> cands;
  for (int p = 0; p < static_cast<int>(proposals.size()); ++p)
    for (int g = 0; g < static_cast<int>(gt_boxes.size()); ++g) {
      const double v = geom::box_iou(proposals[p].box, gt_boxes[g]);
      if (v >= iou_threshold) cands.push_back({v, p, g});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.prop != b.prop) return a.prop < b.prop;
    return a.gt < b.gt;
  });
  std::vector<int> assignment(proposals.size(), -1);
  std::vector<char> gt_used(gt_boxes.size(), 0);
  for (const auto& c : cands) {
    if (assignment[c.prop] != -1 || gt_used[c.gt]) continue;
    assignment[c.prop] = c.gt;
    gt_used[c.gt] = 1;
  }
  return assignment;
}

std::vector<int> assign_cells(const std::vector<geom::Box>& gt_boxes,
                              int grid_h, int grid_w, int stride) {
  std::vector<int> assign(static_cast<std::size_t>(grid_h) * grid_w, -1);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const double cx = (j + 0.5) * stride, cy = (i + 0.5) * stride;
      int best = -1;
      double best_area = 0.0;
      for (int g = 0; g < static_cast<int>(gt_boxes.size()); ++g) {
        const geom::Box& b = gt_boxes[g];
        const double mx = (b.x0 + b.x1) / 2, my = (b.y0 + b.y1) / 2;
        const double hw = b.width() / 4, hh = b.height() / 4;  // central half
        if (cx < mx - hw || cx > mx + hw || cy < my - hh || cy > my + hh)
          continue;
        if (best < 0 || b.area() < best_area) {
          best = g;
          best_area = b.area();
        }
      }
      assign[static_cast<std::size_t>(i) * grid_w + j] = best;
    }
  return assign;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor focal_loss(const Tensor& prob_true_class, double alpha, double gamma) {
  constexpr double kEps = 1e-7;
  Tensor p = clamp(prob_true_class, kEps, 1.0 - kEps);
  Tensor one_minus = add_scalar(neg(p), 1.0);
  Tensor weight = powc(one_minus, gamma);
  Tensor per_entry = scale(mul(weight, log_t(p)), -alpha);
  return mean(per_entry);
}

Tensor giou_loss(const Tensor& pred_box, const geom::Box& gt) {
  if (pred_box.numel() != 4) throw ShapeError("giou_loss: box must be (4,)");
  const auto& v = pred_box.values();
  if (!(v[2] > v[0]) || !(v[3] > v[1]))
    throw Error("giou_loss: zero-area predicted box rejected");
  if (!(gt.x1 > gt.x0) || !(gt.y1 > gt.y0))
    throw Error("giou_loss: zero-area ground-truth box rejected");
  Tensor b = reshape(pred_box, {1, 4});
  Tensor px0 = slice2d(b, 1, 0, 1), py0 = slice2d(b, 1, 1, 1);
  Tensor px1 = slice2d(b, 1, 2, 1), py1 = slice2d(b, 1, 3, 1);
  auto c = [](double x) { return Tensor::constant({1, 1}, x); };
  Tensor area_p = mul(sub(px1, px0), sub(py1, py0));
  const double area_g = (gt.x1 - gt.x0) * (gt.y1 - gt.y0);
  Tensor iw = clamp_min(sub(minimum(px1, c(gt.x1)), maximum(px0, c(gt.x0))), 0.0);
  Tensor ih = clamp_min(sub(minimum(py1, c(gt.y1)), maximum(py0, c(gt.y0))), 0.0);
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add_scalar(area_p, area_g), inter);
  Tensor iou = div(inter, uni);
  Tensor hw = sub(maximum(px1, c(gt.x1)), minimum(px0, c(gt.x0)));
  Tensor hh = sub(maximum(py1, c(gt.y1)), minimum(py0, c(gt.y0)));
  Tensor hull = mul(hw, hh);
  Tensor giou = sub(iou, div(sub(hull, uni), hull));
  return reshape(add_scalar(neg(giou), 1.0), {1});
}

Tensor l1_loss(const Tensor& pred_box, const geom::Box& gt, double img_w,
               double img_h) {
  if (pred_box.numel() != 4) throw ShapeError("l1_loss: box must be (4,)");
  Tensor gt_t = Tensor::from_data({4}, {gt.x0, gt.y0, gt.x1, gt.y1});
  Tensor inv_scale = Tensor::from_data(
      {4}, {1.0 / img_w, 1.0 / img_h, 1.0 / img_w, 1.0 / img_h});
  return mean(abs_t(mul(sub(pred_box, gt_t), inv_scale)));
}

Tensor mask_loss(const Tensor& mask_logits, const std::vector<double>& target) {
  return bce_with_logits_mean(mask_logits, target);
}

std::vector<double> rasterize_polygon(const geom::Polygon& poly,
                                      const geom::Box& box, int s) {
  std::vector<double> out(static_cast<std::size_t>(s) * s, 0.0);
  const double bw = box.width(), bh = box.height();
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const geom::Point p{box.x0 + (j + 0.5) * bw / s,
                          box.y0 + (i + 0.5) * bh / s};
      if (geom::point_in_polygon(p, poly))
        out[static_cast<std::size_t>(i) * s + j] = 1.0;
    }
  return out;
}

std::vector<int> encode_target(const std::string& transcription,
                               const HeadsConfig& cfg) {
  const int T = cfg.max_steps;
  std::string text = transcription;
  if (static_cast<int>(text.size()) > T - 1) {
    warn(str_cat("transcription '", text, "' longer than ", T - 1,
                 " steps; truncating"));
    text.resize(T - 1);
  }
  std::vector<int> target(T, pad_index(cfg));
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto pos = cfg.alphabet.find(text[i]);
    if (pos == std::string::npos)
      throw Error(str_cat("character '", text[i], "' not in alphabet"));
    target[i] = static_cast<int>(pos);
  }
  target[text.size()] = eos_index(cfg);
  return target;
}

Tensor recognition_loss(const Tensor& step_logits,
                        const std::string& transcription,
                        const HeadsConfig& cfg, bool strict_t) {
  const int T = cfg.max_steps;
  if (step_logits.ndim() != 2 || step_logits.dim(0) != T ||
      step_logits.dim(1) != vocab_size(cfg))
    throw ShapeError("recognition_loss: logits must be (T, vocab)");
  const std::vector<int> target = encode_target(transcription, cfg);
  int t_eff = 0;
  for (int t = 0; t < T; ++t)
    if (target[t] != pad_index(cfg)) ++t_eff;
  const int denom = strict_t ? T : t_eff;
  Tensor log_probs = log_softmax_rows(step_logits);
  Tensor picked = pick_per_row(log_probs, target);  // (T,)
  std::vector<double> w(T, 0.0);
  for (int t = 0; t < T; ++t) {
    const bool counted = strict_t || target[t] != pad_index(cfg);
    if (counted) w[t] = -1.0 / denom;
  }
  return weighted_sum(picked, std::move(w));
}

namespace {
void require_finite(const Tensor& t, const char* name) {
  if (!std::isfinite(t.item()))
    throw Error(str_cat("non-finite loss component: ", name, " = ", t.item()));
}
}  // namespace

Tensor detection_loss(const Tensor& l_cls, const Tensor& l_giou,
                      const Tensor& l_l1, const Tensor& l_mask,
                      const LossWeights& w) {
  require_finite(l_cls, "L_cls");
  require_finite(l_giou, "L_giou");
  require_finite(l_l1, "L_L1");
  require_finite(l_mask, "L_mask");
  return add(add(add(l_cls, scale(l_giou, w.giou)), scale(l_l1, w.l1)),
             scale(l_mask, w.mask));
}

Tensor joint_loss(const Tensor& l_det, const Tensor& l_rec,
                  const LossWeights& w) {
  require_finite(l_det, "L_det");
  require_finite(l_rec, "L_rec");
  return add(l_det, scale(l_rec, w.rec));
}

}  // namespace stspot::heads
