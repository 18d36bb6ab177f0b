#include "stspot/same.hpp"

namespace stspot::same {

using namespace ad;

SameModule SameModule::create(nn::ParamStore& ps, const SameConfig& cfg,
                              Rng& rng) {
  SameModule m;
  m.cfg_ = cfg;
  m.mask_proj_ =
      nn::Linear::create(ps, "same.mask_proj", cfg.mask_channels, cfg.channels, rng);
  m.tre_ = nn::TransformerStack::create(ps, "same.tre", cfg.tre_layers,
                                        cfg.channels, cfg.tre_heads, cfg.tre_ff,
                                        rng);
  const int c = cfg.channels;
  auto make_up = [&](const std::string& name, Tensor& w, Tensor& b) {
    w = ps.create("same." + name + ".w", {c, c, 2, 2}, nn::Init::XavierUniform,
                  rng);
    b = ps.create("same." + name + ".b", {c}, nn::Init::Zeros, rng);
  };
  make_up("up_embed2", m.up_embed2_w, m.up_embed2_b);
  make_up("up_embed3", m.up_embed3_w, m.up_embed3_b);
  make_up("up_fuse2", m.up_fuse2_w, m.up_fuse2_b);
  make_up("up_fuse3", m.up_fuse3_w, m.up_fuse3_b);
  return m;
}

RoiAttentionCrop SameModule::roi_crop_attention(const Tensor& f1,
                                                const Tensor& f2,
                                                const Tensor& f3,
                                                const Tensor& box) const {
  const int s = cfg_.roi_size;
  if (s < 4) throw ConfigError("roi_size must be at least 4");
  for (const Tensor* f : {&f1, &f2, &f3})
    if (f->ndim() != 3 || f->dim(0) != cfg_.channels)
      throw ShapeError("roi_crop_attention: feature maps must be (C,H,W)");
  if (f2.dim(1) != 2 * f1.dim(1) || f3.dim(1) != 4 * f1.dim(1) ||
      f2.dim(2) != 2 * f1.dim(2) || f3.dim(2) != 4 * f1.dim(2))
    throw ShapeError("roi_crop_attention: levels must be in 1:2:4 resolution");
  RoiAttentionCrop crop;
  crop.a1 = roi_bilinear(f1, box, s, s, 32.0);
  crop.a2 = roi_bilinear(f2, box, 2 * s, 2 * s, 16.0);
  crop.a3 = roi_bilinear(f3, box, 4 * s, 4 * s, 8.0);
  return crop;
}

Tensor SameModule::mask_transformer_encode(const Tensor& mask_logits) const {
  const int s = cfg_.roi_size;
  if (mask_logits.ndim() != 3 || mask_logits.dim(0) != cfg_.mask_channels ||
      mask_logits.dim(1) != s || mask_logits.dim(2) != s)
    throw ShapeError(str_cat("mask_transformer_encode: expected (",
                             cfg_.mask_channels, ",", s, ",", s, "), got ",
                             shape_str(mask_logits.shape())));
  Tensor tokens = mask_proj_.apply(nn::to_tokens(mask_logits));  // (S*S, C)
  tokens = add(tokens, nn::to_tokens(encoder::positional_encoding(
                           s, s, cfg_.channels)));
  return nn::from_tokens(tre_.apply(tokens), cfg_.channels, s, s);
}

namespace {

void check_same_shape(const Tensor& got, int c, int h, int w, const char* what) {
  if (got.ndim() != 3 || got.dim(0) != c || got.dim(1) != h || got.dim(2) != w)
    throw ShapeError(str_cat(what, ": expected (", c, ",", h, ",", w, "), got ",
                             shape_str(got.shape()),
                             " (no implicit broadcast)"));
}

}  // namespace

RefinedMasks SameModule::hierarchical_embed(const Tensor& d1,
                                            const RoiAttentionCrop& crop) const {
  const int c = cfg_.channels, s = cfg_.roi_size;
  check_same_shape(d1, c, s, s, "hierarchical_embed d1");
  check_same_shape(crop.a2, c, 2 * s, 2 * s, "hierarchical_embed a2");
  check_same_shape(crop.a3, c, 4 * s, 4 * s, "hierarchical_embed a3");
  RefinedMasks rm;
  rm.d1 = d1;
  rm.d2 = add(conv_transpose2x(d1, up_embed2_w, up_embed2_b), crop.a2);
  rm.d3 = add(conv_transpose2x(rm.d2, up_embed3_w, up_embed3_b), crop.a3);
  rm.m1 = sigmoid(rm.d1);
  rm.m2 = sigmoid(rm.d2);
  rm.m3 = sigmoid(rm.d3);
  return rm;
}

FusionMaps SameModule::fuse_attention_masks(const RefinedMasks& rm,
                                            const RoiAttentionCrop& crop) const {
  const int c = cfg_.channels, s = cfg_.roi_size;
  check_same_shape(rm.d1, c, s, s, "fuse d1");
  check_same_shape(crop.a1, c, s, s, "fuse a1");
  check_same_shape(crop.a2, c, 2 * s, 2 * s, "fuse a2");
  check_same_shape(crop.a3, c, 4 * s, 4 * s, "fuse a3");
  FusionMaps fm;
  fm.sm1 = add(mul(rm.m1, rm.d1), crop.a1);
  fm.sm2 = mul(rm.m2, add(conv_transpose2x(fm.sm1, up_fuse2_w, up_fuse2_b),
                          crop.a2));
  fm.sm3 = mul(rm.m3, add(conv_transpose2x(fm.sm2, up_fuse3_w, up_fuse3_b),
                          crop.a3));
  return fm;
}

Tensor SameModule::stop_gradient_gate(const Tensor& sm3, bool blocked) {
  return blocked ? stop_gradient(sm3) : sm3;
}

}  // namespace stspot::same
