#ifndef STSPOT_BACKBONE_HPP_
#define STSPOT_BACKBONE_HPP_

#include <array>

#include "stspot/nn.hpp"

namespace stspot::backbone {

using ad::Tensor;

struct BackboneConfig {
  int embed_dim = 64;        // stage widths: embed, 2x, 4x
  int blocks_per_stage = 2;
  int window = 4;
  int heads = 4;
  int fpn_channels = 64;
  int ff_mult = 2;
};

/// P3/P4/P5 at strides 8/16/32, all at the shared FPN channel count.
struct FeaturePyramid {
  Tensor p3, p4, p5;  // (N,C,H/8,W/8), (N,C,H/16,W/16), (N,C,H/32,W/32)
};

/// Windowed self-attention over one feature map, alternating blocks using a
/// half-window cyclic shift. A window covering the whole map degenerates to
/// global attention.
Tensor window_attention(const Tensor& tokens, int h, int w, int window,
                        int shift, int heads, const nn::Linear& q,
                        const nn::Linear& k, const nn::Linear& v,
                        const nn::Linear& out);

class BackboneNet {
 public:
  static BackboneNet create(nn::ParamStore& ps, const BackboneConfig& cfg,
                            Rng& rng);

  /// Stage features C3/C4/C5 from an (N,3,H,W) image batch; H and W must be
  /// multiples of 32.
  std::array<Tensor, 3> extract_features(const Tensor& images) const;

  /// Lateral 1x1 projections, top-down nearest 2x upsampling with addition,
  /// then 3x3 smoothing per level.
  FeaturePyramid fpn_fuse(const Tensor& c3, const Tensor& c4,
                          const Tensor& c5) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct WinBlock {
    nn::LayerNorm ln1, ln2;
    nn::Linear q, k, v, out;
    nn::Linear ff1, ff2;
  };
  struct Stage {
    Tensor merge_w, merge_b;  // patch-merge conv kernel
    int patch = 2;
    int width = 0;
    std::vector<WinBlock> blocks;
  };
  Tensor run_stage(const Stage& st, const Tensor& x) const;

  BackboneConfig cfg_;
  Stage s1_, s2_, s3_;
  Tensor lat3_w, lat3_b, lat4_w, lat4_b, lat5_w, lat5_b;
  Tensor smooth3_w, smooth3_b, smooth4_w, smooth4_b, smooth5_w, smooth5_b;
};

}  // namespace stspot::backbone

#endif  // STSPOT_BACKBONE_HPP_
