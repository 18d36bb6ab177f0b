#ifndef STSPOT_ATTN_ENCODER_HPP_
#define STSPOT_ATTN_ENCODER_HPP_

#include "stspot/backbone.hpp"
#include "stspot/nn.hpp"

namespace stspot::encoder {

using ad::Tensor;

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int channels = 64;    // must match the FPN channel count
  int ff_dim = 128;
  bool shared = true;   // one stack applied to every level
  int max_tokens = 8192;
};

/// Fixed 2-D sinusoidal table, (C,H,W): first C/2 channels encode the row
/// index, the rest the column index; within each half sin/cos alternate.
/// C must be divisible by 4.
Tensor positional_encoding(int h, int w, int c);

/// Transformer-encoded pyramid levels. f1 is the coarsest (from P5), f3 the
/// finest (from P3): the hierarchical embedding consumes them coarse-to-fine.
struct SoftAttentionFeatures {
  Tensor f1, f2, f3;  // (N,C,H/32,W/32), (N,C,H/16,W/16), (N,C,H/8,W/8)
};

class PyramidEncoder {
 public:
  static PyramidEncoder create(nn::ParamStore& ps, const EncoderConfig& cfg,
                               Rng& rng);

  /// Flatten each level to tokens, add positional encoding, run the encoder
  /// stack, reshape back.
  SoftAttentionFeatures encode_pyramid(const backbone::FeaturePyramid& pyr) const;

  /// Single level helper (also the gradcheck surface).
  Tensor encode_level(const Tensor& level_nchw, int level_index) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<nn::TransformerStack> stacks_;  // 1 if shared, else 3
};

}  // namespace stspot::encoder

#endif  // STSPOT_ATTN_ENCODER_HPP_
