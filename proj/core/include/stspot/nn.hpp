#ifndef STSPOT_NN_HPP_
#define STSPOT_NN_HPP_

#include <map>
#include <string>
#include <vector>

#include "stspot/rng.hpp"
#include "stspot/tensor.hpp"

namespace stspot::nn {

using ad::Tensor;

enum class Init { Zeros, Ones, XavierUniform, Normal02 };

/// Named registry of trainable tensors. Iteration order is the name order,
/// which keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  Tensor create(const std::string& name, ad::Shape shape, Init init, Rng& rng);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return params_; }
  void zero_grads();
  std::int64_t total_size() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
  static Linear create(ParamStore& ps, const std::string& prefix, int in,
                       int out, Rng& rng);
  Tensor apply(const Tensor& x) const;  // (T,in) -> (T,out)
};

struct LayerNorm {
  Tensor gain, bias;
  static LayerNorm create(ParamStore& ps, const std::string& prefix, int dim,
                          Rng& rng);
  Tensor apply(const Tensor& x) const;
};

struct MultiheadAttention {
  Linear q, k, v, out;
  int heads = 1;
  int dim = 0;
  static MultiheadAttention create(ParamStore& ps, const std::string& prefix,
                                   int dim, int heads, Rng& rng);
  /// q_tokens (Tq,C) attend over kv_tokens (Tk,C). When `attn_out` is given
  /// the per-head softmax maps (Tq,Tk) are appended to it.
  Tensor apply(const Tensor& q_tokens, const Tensor& kv_tokens,
               std::vector<Tensor>* attn_out = nullptr) const;
};

/// Pre-norm residual block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiheadAttention attn;
  Linear ff1, ff2;
  static TransformerLayer create(ParamStore& ps, const std::string& prefix,
                                 int dim, int heads, int ff_dim, Rng& rng);
  Tensor apply(const Tensor& tokens) const;
  /// Cross-attention form: queries attend over `memory`.
  Tensor apply_cross(const Tensor& queries, const Tensor& memory,
                     std::vector<Tensor>* attn_out = nullptr) const;
};

struct TransformerStack {
  std::vector<TransformerLayer> layers;
  static TransformerStack create(ParamStore& ps, const std::string& prefix,
                                 int n_layers, int dim, int heads, int ff_dim,
                                 Rng& rng);
  Tensor apply(const Tensor& tokens) const;
};

// (C,H,W) <-> (H*W, C) token views.
Tensor to_tokens(const Tensor& chw);
Tensor from_tokens(const Tensor& tokens, int c, int h, int w);

// Batch helpers over 4-D (N,C,H,W) tensors.
Tensor batch_slice(const Tensor& nchw, int n);
Tensor batch_stack(const std::vector<Tensor>& chw_list);

}  // namespace stspot::nn

#endif  // STSPOT_NN_HPP_
