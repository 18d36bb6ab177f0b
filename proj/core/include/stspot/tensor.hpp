#ifndef STSPOT_TENSOR_HPP_
#define STSPOT_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stspot/common.hpp"

namespace stspot::ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // pulls this->grad into parents' grads

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

/// Value-semantics handle to a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, double fill = 0.0);
  static Tensor from_data(Shape shape, std::vector<double> data);
  /// Leaf with requires_grad set; the unit every optimizer step touches.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  int dim(int i) const;
  std::int64_t numel() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  std::vector<double>& grad();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  void zero_grad();

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend Tensor wrap_node(std::shared_ptr<Node> n);
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor powc(const Tensor& a, double e);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Scalar dot with a fixed probe vector; the gradcheck harness uses this to
/// scalarize multi-output operations.
Tensor weighted_sum(const Tensor& a, std::vector<double> w);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2d(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int dim);  // 2-D, dim 0 or 1
Tensor slice2d(const Tensor& a, int dim, int start, int len);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
Tensor pick_per_row(const Tensor& a, std::vector<int> col);  // (R,C) -> (R,)

// ---- linear algebra / nn primitives ----
Tensor matmul(const Tensor& a, const Tensor& b);  // (M,K)x(K,N)
Tensor add_rowvec(const Tensor& a, const Tensor& b);  // (R,C) + (C,) per row
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// ---- spatial (3-D C,H,W or 4-D N,C,H,W; rank preserved) ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
/// Learnable 2x doubling: kernel 2x2, stride 2, weight (Cin,Cout,2,2).
Tensor conv_transpose2x(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor upsample_nearest2x(const Tensor& x);
/// Bilinear crop of `feat` (C,Hf,Wf) over `box` = (x0,y0,x1,y1) in image
/// pixels, `stride` image pixels per feature cell. Differentiable in both
/// the features and the box coordinates.
Tensor roi_bilinear(const Tensor& feat, const Tensor& box, int out_h,
                    int out_w, double stride);

// ---- fused losses ----
/// Mean binary cross entropy between logits and constant targets in [0,1].
Tensor bce_with_logits_mean(const Tensor& logits, std::vector<double> targets);
/// Mean of -alpha*(1-p)^gamma*log(p) where p is the probability assigned to
/// the true class: sigmoid(z) where positive[i], 1-sigmoid(z) elsewhere.
Tensor focal_from_logits(const Tensor& logits, std::vector<char> positive,
                         double alpha, double gamma);

// ---- control ----
/// Identity forward; reverse-mode flow ends here.
Tensor stop_gradient(const Tensor& a);

/// Reverse pass from a scalar root. Accumulates into .grad of every node
/// with requires_grad on a path to the root.
void backward(const Tensor& root);

}  // namespace stspot::ad

#endif  // STSPOT_TENSOR_HPP_
