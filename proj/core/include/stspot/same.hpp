#ifndef STSPOT_SAME_HPP_
#define STSPOT_SAME_HPP_

#include "stspot/attn_encoder.hpp"
#include "stspot/nn.hpp"

namespace stspot::same {

using ad::Tensor;

struct SameConfig {
  int channels = 64;     // C, matches the encoder channel count
  int roi_size = 16;     // S; the fused map SM3 is 4S x 4S
  int mask_channels = 1; // C_m of the incoming mask logits
  int tre_layers = 2;
  int tre_heads = 4;
  int tre_ff = 128;
};

/// Per-instance crops of f1/f2/f3 over one image-space box, at S, 2S and 4S.
struct RoiAttentionCrop {
  Tensor a1, a2, a3;  // (C,S,S), (C,2S,2S), (C,4S,4S)
};

struct RefinedMasks {
  Tensor d1, d2, d3;  // embedding maps
  Tensor m1, m2, m3;  // sigmoid masks, every element in (0,1)
};

struct FusionMaps {
  Tensor sm1, sm2, sm3;
};

class SameModule {
 public:
  static SameModule create(nn::ParamStore& ps, const SameConfig& cfg, Rng& rng);

  /// Bilinear region sampling of the three per-image feature maps
  /// (C,H/32,W/32), (C,H/16,W/16), (C,H/8,W/8) over the same box.
  RoiAttentionCrop roi_crop_attention(const Tensor& f1, const Tensor& f2,
                                      const Tensor& f3, const Tensor& box) const;

  /// Mask tokens projected to C channels and run through the encoder stack:
  /// the embedding map d1 at (C,S,S).
  Tensor mask_transformer_encode(const Tensor& mask_logits) const;

  /// d2 = up(d1) + a2; d3 = up(d2) + a3; masks are element-wise sigmoids of
  /// the embedding maps. Shape mismatches are hard errors.
  RefinedMasks hierarchical_embed(const Tensor& d1,
                                  const RoiAttentionCrop& crop) const;

  /// sm1 = m1*d1 + a1; sm2 = m2*(up(sm1) + a2); sm3 = m3*(up(sm2) + a3).
  /// The two alignment upsamplers share the learnable family used above.
  FusionMaps fuse_attention_masks(const RefinedMasks& rm,
                                  const RoiAttentionCrop& crop) const;

  /// Values pass through unchanged; when blocked, reverse-mode flow from the
  /// recognizer stops here.
  static Tensor stop_gradient_gate(const Tensor& sm3, bool blocked);

  const SameConfig& config() const { return cfg_; }

  // The four learnable 2x upsampling blocks, exposed for tests.
  Tensor up_embed2_w, up_embed2_b;  // d1 -> d2
  Tensor up_embed3_w, up_embed3_b;  // d2 -> d3
  Tensor up_fuse2_w, up_fuse2_b;    // sm1 alignment
  Tensor up_fuse3_w, up_fuse3_b;    // sm2 alignment

 private:
  SameConfig cfg_;
  nn::Linear mask_proj_;
  nn::TransformerStack tre_;
};

}  // namespace stspot::same

#endif  // STSPOT_SAME_HPP_
