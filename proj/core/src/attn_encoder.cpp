#include "stspot/attn_encoder.hpp"

#include <cmath>

namespace stspot::encoder {

using namespace ad;

Tensor positional_encoding(int h, int w, int c) {
  if (c % 4 != 0)
    throw ShapeError(str_cat("positional_encoding: channel count ", c,
                             " must be divisible by 4"));
  std::vector<double> data(static_cast<std::size_t>(c) * h * w);
  const int half = c / 2;
  const int pairs = half / 2;
  auto write_axis = [&](int chan_base, auto coord_of) {
    for (int p = 0; p < pairs; ++p) {
      const double freq =
          std::pow(10000.0, -2.0 * p / static_cast<double>(half));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double pos = coord_of(y, x) * freq;
          const std::size_t base = static_cast<std::size_t>(y) * w + x;
          data[(static_cast<std::size_t>(chan_base + 2 * p) * h * w) + base] =
              std::sin(pos);
          data[(static_cast<std::size_t>(chan_base + 2 * p + 1) * h * w) + base] =
              std::cos(pos);
        }
    }
  };
  write_axis(0, [](int y, int) { return static_cast<double>(y); });
  write_axis(half, [](int, int x) { return static_cast<double>(x); });
  return Tensor::from_data({c, h, w}, std::move(data));
}

PyramidEncoder PyramidEncoder::create(nn::ParamStore& ps,
                                      const EncoderConfig& cfg, Rng& rng) {
  PyramidEncoder enc;
  enc.cfg_ = cfg;
  const int n_stacks = cfg.shared ? 1 : 3;
  for (int i = 0; i < n_stacks; ++i) {
    const std::string prefix =
        cfg.shared ? std::string("attn_encoder") : str_cat("attn_encoder.level", i + 1);
    enc.stacks_.push_back(nn::TransformerStack::create(
        ps, prefix, cfg.layers, cfg.channels, cfg.heads, cfg.ff_dim, rng));
  }
  return enc;
}

Tensor PyramidEncoder::encode_level(const Tensor& level_nchw,
                                    int level_index) const {
  if (level_nchw.ndim() != 4)
    throw ShapeError("encode_level: expected (N,C,H,W)");
  const int n = level_nchw.dim(0), c = level_nchw.dim(1),
            h = level_nchw.dim(2), w = level_nchw.dim(3);
  if (c != cfg_.channels)
    throw ShapeError(str_cat("encode_level: channel count ", c,
                             " != configured ", cfg_.channels));
  if (h * w > cfg_.max_tokens)
    throw Error(str_cat("encode_level: level has ", h * w,
                        " tokens, exceeding the configured maximum ",
                        cfg_.max_tokens,
                        "; raise encoder.max_tokens or shrink the input"));
  const nn::TransformerStack& stack =
      cfg_.shared ? stacks_[0] : stacks_.at(level_index - 1);
  Tensor pos = nn::to_tokens(positional_encoding(h, w, c));
  std::vector<Tensor> outs;
  outs.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tensor tokens = add(nn::to_tokens(nn::batch_slice(level_nchw, i)), pos);
    outs.push_back(nn::from_tokens(stack.apply(tokens), c, h, w));
  }
  return nn::batch_stack(outs);
}

SoftAttentionFeatures PyramidEncoder::encode_pyramid(
    const backbone::FeaturePyramid& pyr) const {
  SoftAttentionFeatures f;
  f.f1 = encode_level(pyr.p5, 1);
  f.f2 = encode_level(pyr.p4, 2);
  f.f3 = encode_level(pyr.p3, 3);
  return f;
}

}  // namespace stspot::encoder
