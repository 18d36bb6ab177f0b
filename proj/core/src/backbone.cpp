#include "stspot/backbone.hpp"

#include <cmath>

namespace stspot::backbone {

using namespace ad;

namespace {

// Largest divisor of `extent` not exceeding `window`.
int effective_window(int extent, int window) {
  int w = std::min(window, extent);
  while (extent % w != 0) --w;
  return w;
}

// Token permutation bringing rows into window-major order after an optional
// cyclic shift. tokens are row-major over (h, w).
std::vector<int> window_order(int h, int w, int win, int shift) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(h) * w);
  const int wh = h / win, ww = w / win;
  for (int bi = 0; bi < wh; ++bi)
    for (int bj = 0; bj < ww; ++bj)
      for (int ii = 0; ii < win; ++ii)
        for (int jj = 0; jj < win; ++jj) {
          const int y = (bi * win + ii + shift + h) % h;
          const int x = (bj * win + jj + shift + w) % w;
          order.push_back(y * w + x);
        }
  return order;
}

std::vector<int> inverse_permutation(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = static_cast<int>(i);
  return inv;
}

}  // namespace

Tensor window_attention(const Tensor& tokens, int h, int w, int window,
                        int shift, int heads, const nn::Linear& q,
                        const nn::Linear& k, const nn::Linear& v,
                        const nn::Linear& out) {
  if (tokens.ndim() != 2 || tokens.dim(0) != h * w)
    throw ShapeError("window_attention: tokens must be (H*W, C)");
  const int c = tokens.dim(1);
  const int win = effective_window(std::min(h, w), window);
  const int wsz = win * win;
  const int n_windows = (h / win) * (w / win);
  const bool whole_map = n_windows == 1;
  const int eff_shift = whole_map ? 0 : shift;

  const auto order = window_order(h, w, win, eff_shift);
  Tensor grouped = gather_rows(tokens, order);
  Tensor Q = q.apply(grouped);
  Tensor K = k.apply(grouped);
  Tensor V = v.apply(grouped);

  const int dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> win_outs;
  win_outs.reserve(n_windows);
  for (int b = 0; b < n_windows; ++b) {
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    Tensor Qw = slice2d(Q, 0, b * wsz, wsz);
    Tensor Kw = slice2d(K, 0, b * wsz, wsz);
    Tensor Vw = slice2d(V, 0, b * wsz, wsz);
    for (int hd = 0; hd < heads; ++hd) {
      Tensor Qh = slice2d(Qw, 1, hd * dh, dh);
      Tensor Kh = slice2d(Kw, 1, hd * dh, dh);
      Tensor Vh = slice2d(Vw, 1, hd * dh, dh);
      Tensor attn = softmax_rows(scale(matmul(Qh, transpose2d(Kh)), inv_sqrt));
      head_outs.push_back(matmul(attn, Vh));
    }
    win_outs.push_back(heads == 1 ? head_outs[0] : concat(head_outs, 1));
  }
  Tensor merged = n_windows == 1 ? win_outs[0] : concat(win_outs, 0);
  Tensor projected = out.apply(merged);
  return gather_rows(projected, inverse_permutation(order));
}

BackboneNet BackboneNet::create(nn::ParamStore& ps, const BackboneConfig& cfg,
                                Rng& rng) {
  BackboneNet net;
  net.cfg_ = cfg;
  const int widths[3] = {cfg.embed_dim, 2 * cfg.embed_dim, 4 * cfg.embed_dim};
  const int in_chans[3] = {3, widths[0], widths[1]};
  const int patches[3] = {8, 2, 2};
  Stage* stages[3] = {&net.s1_, &net.s2_, &net.s3_};
  for (int s = 0; s < 3; ++s) {
    Stage& st = *stages[s];
    st.patch = patches[s];
    st.width = widths[s];
    const std::string prefix = str_cat("backbone.stage", s + 1);
    st.merge_w = ps.create(prefix + ".merge.w",
                           {st.width, in_chans[s], st.patch, st.patch},
                           nn::Init::XavierUniform, rng);
    st.merge_b = ps.create(prefix + ".merge.b", {st.width}, nn::Init::Zeros, rng);
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      WinBlock blk;
      const std::string bp = str_cat(prefix, ".block", b);
      blk.ln1 = nn::LayerNorm::create(ps, bp + ".ln1", st.width, rng);
      blk.ln2 = nn::LayerNorm::create(ps, bp + ".ln2", st.width, rng);
      blk.q = nn::Linear::create(ps, bp + ".q", st.width, st.width, rng);
      blk.k = nn::Linear::create(ps, bp + ".k", st.width, st.width, rng);
      blk.v = nn::Linear::create(ps, bp + ".v", st.width, st.width, rng);
      blk.out = nn::Linear::create(ps, bp + ".out", st.width, st.width, rng);
      blk.ff1 = nn::Linear::create(ps, bp + ".ff1", st.width,
                                   cfg.ff_mult * st.width, rng);
      blk.ff2 = nn::Linear::create(ps, bp + ".ff2", cfg.ff_mult * st.width,
                                   st.width, rng);
      st.blocks.push_back(std::move(blk));
    }
  }
  const int fc = cfg.fpn_channels;
  net.lat3_w = ps.create("backbone.fpn.lat3.w", {fc, widths[0], 1, 1},
                         nn::Init::XavierUniform, rng);
  net.lat3_b = ps.create("backbone.fpn.lat3.b", {fc}, nn::Init::Zeros, rng);
  net.lat4_w = ps.create("backbone.fpn.lat4.w", {fc, widths[1], 1, 1},
                         nn::Init::XavierUniform, rng);
  net.lat4_b = ps.create("backbone.fpn.lat4.b", {fc}, nn::Init::Zeros, rng);
  net.lat5_w = ps.create("backbone.fpn.lat5.w", {fc, widths[2], 1, 1},
                         nn::Init::XavierUniform, rng);
  net.lat5_b = ps.create("backbone.fpn.lat5.b", {fc}, nn::Init::Zeros, rng);
  net.smooth3_w = ps.create("backbone.fpn.smooth3.w", {fc, fc, 3, 3},
                            nn::Init::XavierUniform, rng);
  net.smooth3_b = ps.create("backbone.fpn.smooth3.b", {fc}, nn::Init::Zeros, rng);
  net.smooth4_w = ps.create("backbone.fpn.smooth4.w", {fc, fc, 3, 3},
                            nn::Init::XavierUniform, rng);
  net.smooth4_b = ps.create("backbone.fpn.smooth4.b", {fc}, nn::Init::Zeros, rng);
  net.smooth5_w = ps.create("backbone.fpn.smooth5.w", {fc, fc, 3, 3},
                            nn::Init::XavierUniform, rng);
  net.smooth5_b = ps.create("backbone.fpn.smooth5.b", {fc}, nn::Init::Zeros, rng);
  return net;
}

Tensor BackboneNet::run_stage(const Stage& st, const Tensor& x) const {
  Tensor merged = conv2d(x, st.merge_w, st.merge_b, st.patch, 0);
  const int n = merged.dim(0), c = merged.dim(1), h = merged.dim(2),
            w = merged.dim(3);
  std::vector<Tensor> outs;
  outs.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tensor tokens = nn::to_tokens(nn::batch_slice(merged, i));
    int block_idx = 0;
    for (const auto& blk : st.blocks) {
      const int win = effective_window(std::min(h, w), cfg_.window);
      const int shift = (block_idx % 2 == 1) ? win / 2 : 0;
      Tensor normed = blk.ln1.apply(tokens);
      Tensor attn_out = window_attention(normed, h, w, cfg_.window, shift,
                                         cfg_.heads, blk.q, blk.k, blk.v,
                                         blk.out);
      tokens = add(tokens, attn_out);
      Tensor ff = blk.ff2.apply(gelu(blk.ff1.apply(blk.ln2.apply(tokens))));
      tokens = add(tokens, ff);
      ++block_idx;
    }
    outs.push_back(nn::from_tokens(tokens, c, h, w));
  }
  return nn::batch_stack(outs);
}

std::array<Tensor, 3> BackboneNet::extract_features(const Tensor& images) const {
  if (images.ndim() != 4 || images.dim(1) != 3)
    throw ShapeError("extract_features: expected (N,3,H,W) input");
  if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
    throw ShapeError(str_cat("extract_features: image size ", images.dim(2),
                             "x", images.dim(3), " not a multiple of 32"));
  Tensor c3 = run_stage(s1_, images);
  Tensor c4 = run_stage(s2_, c3);
  Tensor c5 = run_stage(s3_, c4);
  return {c3, c4, c5};
}

FeaturePyramid BackboneNet::fpn_fuse(const Tensor& c3, const Tensor& c4,
                                     const Tensor& c5) const {
  for (const Tensor* t : {&c3, &c4, &c5})
    if (t->ndim() != 4) throw ShapeError("fpn_fuse: expected (N,C,H,W) stages");
  if (c3.dim(2) != 2 * c4.dim(2) || c4.dim(2) != 2 * c5.dim(2) ||
      c3.dim(3) != 2 * c4.dim(3) || c4.dim(3) != 2 * c5.dim(3))
    throw ShapeError("fpn_fuse: stage spatial sizes must halve per level");
  Tensor t5 = conv2d(c5, lat5_w, lat5_b, 1, 0);
  Tensor t4 = add(conv2d(c4, lat4_w, lat4_b, 1, 0), upsample_nearest2x(t5));
  Tensor t3 = add(conv2d(c3, lat3_w, lat3_b, 1, 0), upsample_nearest2x(t4));
  FeaturePyramid pyr;
  pyr.p5 = conv2d(t5, smooth5_w, smooth5_b, 1, 1);
  pyr.p4 = conv2d(t4, smooth4_w, smooth4_b, 1, 1);
  pyr.p3 = conv2d(t3, smooth3_w, smooth3_b, 1, 1);
  return pyr;
}

}  // namespace stspot::backbone
