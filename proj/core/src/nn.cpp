#include "stspot/nn.hpp"

#include <cmath>

namespace stspot::nn {

using namespace ad;

Tensor ParamStore::create(const std::string& name, Shape shape, Init init,
                          Rng& rng) {
  if (params_.count(name))
    throw ConfigError(str_cat("parameter '", name, "' registered twice"));
  const auto n = shape_numel(shape);
  std::vector<double> data(n, 0.0);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case Init::XavierUniform: {
      // fan_in/fan_out from the first two dims; conv kernels fold the rest.
      double fan_in = shape.size() >= 1 ? shape[0] : 1;
      double fan_out = shape.size() >= 2 ? shape[1] : 1;
      for (std::size_t i = 2; i < shape.size(); ++i) {
        fan_in *= shape[i];
        fan_out *= shape[i];
      }
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : data) v = rng.uniform(-a, a);
      break;
    }
    case Init::Normal02:
      for (auto& v : data) v = rng.normal(0.0, 0.02);
      break;
  }
  Tensor t = Tensor::param(std::move(shape), std::move(data));
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ConfigError(str_cat("unknown parameter '", name, "'"));
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Linear Linear::create(ParamStore& ps, const std::string& prefix, int in,
                      int out, Rng& rng) {
  Linear l;
  l.w = ps.create(prefix + ".w", {in, out}, Init::XavierUniform, rng);
  l.b = ps.create(prefix + ".b", {out}, Init::Zeros, rng);
  return l;
}

Tensor Linear::apply(const Tensor& x) const {
  return add_rowvec(matmul(x, w), b);
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& prefix, int dim,
                            Rng& rng) {
  LayerNorm ln;
  ln.gain = ps.create(prefix + ".gain", {dim}, Init::Ones, rng);
  ln.bias = ps.create(prefix + ".bias", {dim}, Init::Zeros, rng);
  return ln;
}

Tensor LayerNorm::apply(const Tensor& x) const {
  return layer_norm_rows(x, gain, bias);
}

MultiheadAttention MultiheadAttention::create(ParamStore& ps,
                                              const std::string& prefix,
                                              int dim, int heads, Rng& rng) {
  if (dim % heads != 0)
    throw ConfigError(str_cat("attention dim ", dim,
                              " not divisible by head count ", heads));
  MultiheadAttention m;
  m.q = Linear::create(ps, prefix + ".q", dim, dim, rng);
  m.k = Linear::create(ps, prefix + ".k", dim, dim, rng);
  m.v = Linear::create(ps, prefix + ".v", dim, dim, rng);
  m.out = Linear::create(ps, prefix + ".out", dim, dim, rng);
  m.heads = heads;
  m.dim = dim;
  return m;
}

Tensor MultiheadAttention::apply(const Tensor& q_tokens,
                                 const Tensor& kv_tokens,
                                 std::vector<Tensor>* attn_out) const {
  const int dh = dim / heads;
  Tensor Q = q.apply(q_tokens);
  Tensor K = k.apply(kv_tokens);
  Tensor V = v.apply(kv_tokens);
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor Qh = slice2d(Q, 1, h * dh, dh);
    Tensor Kh = slice2d(K, 1, h * dh, dh);
    Tensor Vh = slice2d(V, 1, h * dh, dh);
    Tensor scores = scale(matmul(Qh, transpose2d(Kh)), inv_sqrt);
    Tensor attn = softmax_rows(scores);
    if (attn_out) attn_out->push_back(attn);
    head_outs.push_back(matmul(attn, Vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return out.apply(merged);
}

TransformerLayer TransformerLayer::create(ParamStore& ps,
                                          const std::string& prefix, int dim,
                                          int heads, int ff_dim, Rng& rng) {
  TransformerLayer l;
  l.ln1 = LayerNorm::create(ps, prefix + ".ln1", dim, rng);
  l.ln2 = LayerNorm::create(ps, prefix + ".ln2", dim, rng);
  l.attn = MultiheadAttention::create(ps, prefix + ".attn", dim, heads, rng);
  l.ff1 = Linear::create(ps, prefix + ".ff1", dim, ff_dim, rng);
  l.ff2 = Linear::create(ps, prefix + ".ff2", ff_dim, dim, rng);
  return l;
}

Tensor TransformerLayer::apply(const Tensor& tokens) const {
  Tensor normed = ln1.apply(tokens);
  Tensor x = add(tokens, attn.apply(normed, normed));
  Tensor h = ff2.apply(gelu(ff1.apply(ln2.apply(x))));
  return add(x, h);
}

Tensor TransformerLayer::apply_cross(const Tensor& queries,
                                     const Tensor& memory,
                                     std::vector<Tensor>* attn_out) const {
  Tensor x = add(queries, attn.apply(ln1.apply(queries), memory, attn_out));
  Tensor h = ff2.apply(gelu(ff1.apply(ln2.apply(x))));
  return add(x, h);
}

TransformerStack TransformerStack::create(ParamStore& ps,
                                          const std::string& prefix,
                                          int n_layers, int dim, int heads,
                                          int ff_dim, Rng& rng) {
  TransformerStack s;
  for (int i = 0; i < n_layers; ++i)
    s.layers.push_back(TransformerLayer::create(
        ps, str_cat(prefix, ".layer", i), dim, heads, ff_dim, rng));
  return s;
}

Tensor TransformerStack::apply(const Tensor& tokens) const {
  Tensor x = tokens;
  for (const auto& l : layers) x = l.apply(x);
  return x;
}

Tensor to_tokens(const Tensor& chw) {
  if (chw.ndim() != 3) throw ShapeError("to_tokens: expected (C,H,W)");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  return transpose2d(reshape(chw, {c, h * w}));
}

Tensor from_tokens(const Tensor& tokens, int c, int h, int w) {
  if (tokens.ndim() != 2 || tokens.dim(0) != h * w || tokens.dim(1) != c)
    throw ShapeError(str_cat("from_tokens: tokens ", shape_str(tokens.shape()),
                             " incompatible with (", c, ",", h, ",", w, ")"));
  return reshape(transpose2d(tokens), {c, h, w});
}

Tensor batch_slice(const Tensor& nchw, int n) {
  if (nchw.ndim() != 4) throw ShapeError("batch_slice: expected (N,C,H,W)");
  const int N = nchw.dim(0), c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
  if (n < 0 || n >= N) throw ShapeError("batch_slice: index out of range");
  Tensor flat = reshape(nchw, {N, c * h * w});
  return reshape(slice2d(flat, 0, n, 1), {c, h, w});
}

Tensor batch_stack(const std::vector<Tensor>& chw_list) {
  if (chw_list.empty()) throw ShapeError("batch_stack: no inputs");
  const int c = chw_list[0].dim(0), h = chw_list[0].dim(1),
            w = chw_list[0].dim(2);
  std::vector<Tensor> rows;
  rows.reserve(chw_list.size());
  for (const auto& t : chw_list) {
    if (t.ndim() != 3 || t.dim(0) != c || t.dim(1) != h || t.dim(2) != w)
      throw ShapeError("batch_stack: mismatched member shapes");
    rows.push_back(reshape(t, {1, c * h * w}));
  }
  return reshape(concat(rows, 0), {static_cast<int>(chw_list.size()), c, h, w});
}

}  // namespace stspot::nn
