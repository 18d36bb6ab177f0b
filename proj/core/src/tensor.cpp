#include "stspot/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace stspot::ad {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor wrap_node(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

static Tensor make_node(Shape shape, std::vector<double> val,
                        std::vector<Tensor> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  if (static_cast<std::int64_t>(n->val.size()) != shape_numel(n->shape))
    throw ShapeError(str_cat("node value size ", n->val.size(),
                             " does not match shape ", shape_str(n->shape)));
  for (const auto& p : parents) {
    n->parents.push_back(p.node_ptr());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  return wrap_node(std::move(n));
}

Tensor Tensor::constant(Shape shape, double fill) {
  auto n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<double>(n, fill), {});
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return make_node(std::move(shape), std::move(data), {});
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = make_node(std::move(shape), std::move(data), {});
  t.node()->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }
int Tensor::dim(int i) const { return node_->shape.at(i); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->val.size()); }
std::vector<double>& Tensor::values() { return node_->val; }
const std::vector<double>& Tensor::values() const { return node_->val; }
std::vector<double>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError(str_cat("item() on tensor of shape ", shape_str(shape())));
  return node_->val[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { node_->requires_grad = rg; }
void Tensor::zero_grad() { node_->grad.assign(node_->val.size(), 0.0); }

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(str_cat(op, ": shape mismatch ", shape_str(a.shape()),
                             " vs ", shape_str(b.shape()),
                             " (implicit broadcasting is not supported)"));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename Fwd, typename Bwd>
static Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name,
                        Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor t = make_node(a.shape(), std::move(out), {a, b});
  Node* self = t.node();
  Node* pa = a.node();
  Node* pb = b.node();
  self->backprop = [self, pa, pb, bwd]() {
    const bool ga = pa->requires_grad, gb = pb->requires_grad;
    if (ga) pa->ensure_grad();
    if (gb) pb->ensure_grad();
    for (std::size_t i = 0; i < self->val.size(); ++i) {
      auto [da, db] = bwd(pa->val[i], pb->val[i], self->val[i]);
      if (ga) pa->grad[i] += self->grad[i] * da;
      if (gb) pb->grad[i] += self->grad[i] * db;
    }
  };
  return t;
}

template <typename Fwd, typename Bwd>
static Tensor unary_ew(const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tensor t = make_node(a.shape(), std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, bwd]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->val.size(); ++i)
      pa->grad[i] += self->grad[i] * bwd(pa->val[i], self->val[i]);
  };
  return t;
}

struct Pair {
  double a, b;
};

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double) { return Pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double) { return Pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double) { return Pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double) {
                     return Pair{1.0 / y, -x / (y * y)};
                   });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "minimum",
                   [](double x, double y) { return std::min(x, y); },
                   [](double x, double y, double) {
                     return x <= y ? Pair{1.0, 0.0} : Pair{0.0, 1.0};
                   });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, "maximum",
                   [](double x, double y) { return std::max(x, y); },
                   [](double x, double y, double) {
                     return x >= y ? Pair{1.0, 0.0} : Pair{0.0, 1.0};
                   });
}

Tensor neg(const Tensor& a) {
  return unary_ew(a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_ew(a, [s](double x) { return s * x; },
                  [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_ew(a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_ew(a,
                  [](double x) {
                    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                    const double e = std::exp(x);
                    return e / (1.0 + e);
                  },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_t(const Tensor& a) {
  return unary_ew(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_ew(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_ew(a,
                  [](double x) {
                    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
                  },
                  [](double x, double) {
                    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                           x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                  });
}

Tensor abs_t(const Tensor& a) {
  return unary_ew(a, [](double x) { return std::abs(x); },
                  [](double x, double) {
                    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                  });
}

Tensor softplus(const Tensor& a) {
  return unary_ew(a,
                  [](double x) {
                    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
                  },
                  [](double x, double) {
                    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                    const double e = std::exp(x);
                    return e / (1.0 + e);
                  });
}

Tensor powc(const Tensor& a, double e) {
  return unary_ew(a, [e](double x) { return std::pow(x, e); },
                  [e](double x, double) { return e * std::pow(x, e - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_ew(a,
                  [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                  [lo, hi](double x, double) {
                    return (x > lo && x < hi) ? 1.0 : 0.0;
                  });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_ew(a, [lo](double x) { return std::max(x, lo); },
                  [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor t = make_node({1}, {s}, {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (auto& g : pa->grad) g += self->grad[0];
  };
  return t;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor t = make_node({1}, {s / n}, {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, n]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self->grad[0] / n;
    for (auto& gr : pa->grad) gr += g;
  };
  return t;
}

Tensor weighted_sum(const Tensor& a, std::vector<double> w) {
  if (w.size() != a.values().size())
    throw ShapeError("weighted_sum: probe size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.values()[i];
  Tensor t = make_node({1}, {s}, {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, w = std::move(w)]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < w.size(); ++i)
      pa->grad[i] += self->grad[0] * w[i];
  };
  return t;
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError(str_cat("reshape: cannot view ", shape_str(a.shape()),
                             " as ", shape_str(shape)));
  Tensor t = make_node(std::move(shape), a.values(), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->val.size(); ++i)
      pa->grad[i] += self->grad[i];
  };
  return t;
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose2d: expected rank 2");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
  Tensor t = make_node({c, r}, std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, r, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) pa->grad[i * c + j] += self->grad[j * r + i];
  };
  return t;
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts)
    if (p.ndim() != 2) throw ShapeError("concat: expected rank-2 inputs");
  if (dim != 0 && dim != 1) throw ShapeError("concat: dim must be 0 or 1");

  int rows = parts[0].dim(0), cols = parts[0].dim(1);
  int total = 0;
  for (const auto& p : parts) {
    if (dim == 0 && p.dim(1) != cols)
      throw ShapeError("concat: column count mismatch");
    if (dim == 1 && p.dim(0) != rows)
      throw ShapeError("concat: row count mismatch");
    total += p.dim(dim);
  }
  Shape out_shape = dim == 0 ? Shape{total, cols} : Shape{rows, total};
  std::vector<double> out(shape_numel(out_shape));
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto& v = p.values();
    if (dim == 0) {
      std::copy(v.begin(), v.end(), out.begin() + static_cast<std::size_t>(off) * cols);
    } else {
      const int pc = p.dim(1);
      for (int i = 0; i < rows; ++i)
        std::copy(v.begin() + static_cast<std::size_t>(i) * pc,
                  v.begin() + static_cast<std::size_t>(i + 1) * pc,
                  out.begin() + static_cast<std::size_t>(i) * total + off);
    }
    off += p.dim(dim);
  }
  Tensor t = make_node(out_shape, std::move(out), parts);
  Node* self = t.node();
  std::vector<Node*> ps;
  std::vector<int> widths;
  for (const auto& p : parts) {
    ps.push_back(p.node());
    widths.push_back(p.dim(dim));
  }
  self->backprop = [self, ps, offsets, widths, dim, rows, cols, total]() {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Node* pa = ps[k];
      if (!pa->requires_grad) continue;
      pa->ensure_grad();
      if (dim == 0) {
        const std::size_t base = static_cast<std::size_t>(offsets[k]) * cols;
        for (std::size_t i = 0; i < pa->val.size(); ++i)
          pa->grad[i] += self->grad[base + i];
      } else {
        const int pc = widths[k];
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < pc; ++j)
            pa->grad[static_cast<std::size_t>(i) * pc + j] +=
                self->grad[static_cast<std::size_t>(i) * total + offsets[k] + j];
      }
    }
  };
  return t;
}

Tensor slice2d(const Tensor& a, int dim, int start, int len) {
  if (a.ndim() != 2) throw ShapeError("slice2d: expected rank 2");
  if (dim != 0 && dim != 1) throw ShapeError("slice2d: dim must be 0 or 1");
  const int r = a.dim(0), c = a.dim(1);
  const int limit = dim == 0 ? r : c;
  if (start < 0 || len <= 0 || start + len > limit)
    throw ShapeError(str_cat("slice2d: range [", start, ",", start + len,
                             ") out of bounds for dim of size ", limit));
  Shape out_shape = dim == 0 ? Shape{len, c} : Shape{r, len};
  std::vector<double> out(shape_numel(out_shape));
  if (dim == 0) {
    std::copy(a.values().begin() + static_cast<std::size_t>(start) * c,
              a.values().begin() + static_cast<std::size_t>(start + len) * c,
              out.begin());
  } else {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j)
        out[static_cast<std::size_t>(i) * len + j] =
            a.values()[static_cast<std::size_t>(i) * c + start + j];
  }
  Tensor t = make_node(out_shape, std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, dim, start, len, r, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    if (dim == 0) {
      const std::size_t base = static_cast<std::size_t>(start) * c;
      for (std::size_t i = 0; i < self->val.size(); ++i)
        pa->grad[base + i] += self->grad[i];
    } else {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          pa->grad[static_cast<std::size_t>(i) * c + start + j] +=
              self->grad[static_cast<std::size_t>(i) * len + j];
    }
  };
  return t;
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  if (a.ndim() != 2) throw ShapeError("gather_rows: expected rank 2");
  const int c = a.dim(1);
  std::vector<double> out(idx.size() * static_cast<std::size_t>(c));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.dim(0))
      throw ShapeError("gather_rows: index out of range");
    std::copy(a.values().begin() + static_cast<std::size_t>(idx[k]) * c,
              a.values().begin() + static_cast<std::size_t>(idx[k] + 1) * c,
              out.begin() + k * c);
  }
  Tensor t = make_node({static_cast<int>(idx.size()), c}, std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, idx = std::move(idx), c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (int j = 0; j < c; ++j)
        pa->grad[static_cast<std::size_t>(idx[k]) * c + j] +=
            self->grad[k * c + j];
  };
  return t;
}

Tensor pick_per_row(const Tensor& a, std::vector<int> col) {
  if (a.ndim() != 2) throw ShapeError("pick_per_row: expected rank 2");
  const int r = a.dim(0), c = a.dim(1);
  if (static_cast<int>(col.size()) != r)
    throw ShapeError("pick_per_row: one column index per row required");
  std::vector<double> out(r);
  for (int i = 0; i < r; ++i) {
    if (col[i] < 0 || col[i] >= c)
      throw ShapeError("pick_per_row: column index out of range");
    out[i] = a.values()[static_cast<std::size_t>(i) * c + col[i]];
  }
  Tensor t = make_node({r}, std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, col = std::move(col), c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < col.size(); ++i)
      pa->grad[i * c + col[i]] += self->grad[i];
  };
  return t;
}

// ---------------------------------------------------------------------------
// linear algebra / nn primitives
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expected rank-2 operands");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError(str_cat("matmul: inner dimensions differ, ",
                             shape_str(a.shape()), " x ", shape_str(b.shape())));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    MapC ma(a.values().data(), m, k);
    MapC mb(b.values().data(), k, n);
    MapM mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  Tensor t = make_node({m, n}, std::move(out), {a, b});
  Node* self = t.node();
  Node* pa = a.node();
  Node* pb = b.node();
  self->backprop = [self, pa, pb, m, k, n]() {
    MapC g(self->grad.data(), m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MapC mb(pb->val.data(), k, n);
      MapM ga(pa->grad.data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MapC ma(pa->val.data(), m, k);
      MapM gb(pb->grad.data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  };
  return t;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2) throw ShapeError("add_rowvec: expected rank-2 lhs");
  const int r = a.dim(0), c = a.dim(1);
  if (b.numel() != c)
    throw ShapeError(str_cat("add_rowvec: vector size ", b.numel(),
                             " != row width ", c));
  std::vector<double> out(a.values().size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] =
          a.values()[static_cast<std::size_t>(i) * c + j] + b.values()[j];
  Tensor t = make_node(a.shape(), std::move(out), {a, b});
  Node* self = t.node();
  Node* pa = a.node();
  Node* pb = b.node();
  self->backprop = [self, pa, pb, r, c]() {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->val.size(); ++i)
        pa->grad[i] += self->grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          pb->grad[j] += self->grad[static_cast<std::size_t>(i) * c + j];
    }
  };
  return t;
}

Tensor softmax_rows(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("softmax_rows: expected rank 2");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.values().size());
  for (int i = 0; i < r; ++i) {
    const double* x = a.values().data() + static_cast<std::size_t>(i) * c;
    double* y = out.data() + static_cast<std::size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= s;
  }
  Tensor t = make_node(a.shape(), std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, r, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = self->val.data() + static_cast<std::size_t>(i) * c;
      const double* gy = self->grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
      double* gx = pa->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  };
  return t;
}

Tensor log_softmax_rows(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("log_softmax_rows: expected rank 2");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.values().size());
  for (int i = 0; i < r; ++i) {
    const double* x = a.values().data() + static_cast<std::size_t>(i) * c;
    double* y = out.data() + static_cast<std::size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  Tensor t = make_node(a.shape(), std::move(out), {a});
  Node* self = t.node();
  Node* pa = a.node();
  self->backprop = [self, pa, r, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = self->val.data() + static_cast<std::size_t>(i) * c;
      const double* gy = self->grad.data() + static_cast<std::size_t>(i) * c;
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += gy[j];
      double* gx = pa->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
    }
  };
  return t;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  if (x.ndim() != 2) throw ShapeError("layer_norm_rows: expected rank 2");
  const int r = x.dim(0), c = x.dim(1);
  if (gain.numel() != c || bias.numel() != c)
    throw ShapeError("layer_norm_rows: gain/bias size must equal row width");
  std::vector<double> out(x.values().size());
  std::vector<double> inv_std(r), mu(r);
  for (int i = 0; i < r; ++i) {
    const double* xr = x.values().data() + static_cast<std::size_t>(i) * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += xr[j];
    m /= c;
    double v = 0.0;
    for (int j = 0; j < c; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= c;
    const double is = 1.0 / std::sqrt(v + eps);
    mu[i] = m;
    inv_std[i] = is;
    double* yr = out.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j)
      yr[j] = (xr[j] - m) * is * gain.values()[j] + bias.values()[j];
  }
  Tensor t = make_node(x.shape(), std::move(out), {x, gain, bias});
  Node* self = t.node();
  Node* px = x.node();
  Node* pg = gain.node();
  Node* pb = bias.node();
  self->backprop = [self, px, pg, pb, r, c, mu = std::move(mu),
                    inv_std = std::move(inv_std)]() {
    const bool need_x = px->requires_grad;
    const bool need_g = pg->requires_grad;
    const bool need_b = pb->requires_grad;
    if (need_x) px->ensure_grad();
    if (need_g) pg->ensure_grad();
    if (need_b) pb->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* xr = px->val.data() + static_cast<std::size_t>(i) * c;
      const double* gy = self->grad.data() + static_cast<std::size_t>(i) * c;
      const double is = inv_std[i], m = mu[i];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < c; ++j) {
        const double xhat = (xr[j] - m) * is;
        const double dxhat = gy[j] * pg->val[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (need_g) pg->grad[j] += gy[j] * xhat;
        if (need_b) pb->grad[j] += gy[j];
      }
      if (need_x) {
        double* gx = px->grad.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double xhat = (xr[j] - m) * is;
          const double dxhat = gy[j] * pg->val[j];
          gx[j] += is * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
        }
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// spatial
// ---------------------------------------------------------------------------

namespace {

struct SpatialView {
  int n, c, h, w;
  bool batched;
};

SpatialView spatial_view(const Tensor& x, const char* op) {
  if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  throw ShapeError(str_cat(op, ": expected rank 3 or 4, got ",
                           shape_str(x.shape())));
}

Shape spatial_shape(const SpatialView& v, int c, int h, int w) {
  return v.batched ? Shape{v.n, c, h, w} : Shape{c, h, w};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  const SpatialView v = spatial_view(x, "conv2d");
  if (w.ndim() != 4) throw ShapeError("conv2d: weight must be rank 4");
  const int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (cin != v.c)
    throw ShapeError(str_cat("conv2d: input channels ", v.c,
                             " != weight channels ", cin));
  if (b.defined() && b.numel() != cout)
    throw ShapeError("conv2d: bias size must equal output channels");
  const int oh = (v.h + 2 * pad - kh) / stride + 1;
  const int ow = (v.w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");

  const int kvol = cin * kh * kw;
  const std::size_t cols_n = static_cast<std::size_t>(v.n) * oh * ow;
  // im2col buffer: (n*oh*ow, cin*kh*kw)
  std::vector<double> cols(cols_n * kvol, 0.0);
  const auto& xv = x.values();
  for (int nn = 0; nn < v.n; ++nn)
    for (int oi = 0; oi < oh; ++oi)
      for (int oj = 0; oj < ow; ++oj) {
        double* row = cols.data() +
                      ((static_cast<std::size_t>(nn) * oh + oi) * ow + oj) * kvol;
        for (int ci = 0; ci < cin; ++ci)
          for (int ki = 0; ki < kh; ++ki) {
            const int ii = oi * stride - pad + ki;
            if (ii < 0 || ii >= v.h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              const int jj = oj * stride - pad + kj;
              if (jj < 0 || jj >= v.w) continue;
              row[(ci * kh + ki) * kw + kj] =
                  xv[((static_cast<std::size_t>(nn) * v.c + ci) * v.h + ii) * v.w + jj];
            }
          }
      }

  // out_mat = cols * W^T  -> (n*oh*ow, cout)
  std::vector<double> out_mat(cols_n * cout);
  {
    MapC mc(cols.data(), static_cast<Eigen::Index>(cols_n), kvol);
    MapC mw(w.values().data(), cout, kvol);
    MapM mo(out_mat.data(), static_cast<Eigen::Index>(cols_n), cout);
    mo.noalias() = mc * mw.transpose();
  }
  // layout to (n, cout, oh, ow)
  std::vector<double> out(static_cast<std::size_t>(v.n) * cout * oh * ow);
  for (int nn = 0; nn < v.n; ++nn)
    for (int oi = 0; oi < oh; ++oi)
      for (int oj = 0; oj < ow; ++oj) {
        const double* src = out_mat.data() +
                            ((static_cast<std::size_t>(nn) * oh + oi) * ow + oj) * cout;
        for (int co = 0; co < cout; ++co)
          out[((static_cast<std::size_t>(nn) * cout + co) * oh + oi) * ow + oj] =
              src[co] + (b.defined() ? b.values()[co] : 0.0);
      }

  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  Tensor t = make_node(spatial_shape(v, cout, oh, ow), std::move(out), parents);
  Node* self = t.node();
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = b.defined() ? b.node() : nullptr;
  self->backprop = [self, px, pw, pb, v, cout, cin, kh, kw, oh, ow, stride, pad,
                    kvol, cols = std::move(cols)]() {
    const std::size_t cols_n = static_cast<std::size_t>(v.n) * oh * ow;
    // gradient w.r.t. output in (n*oh*ow, cout) layout
    std::vector<double> gmat(cols_n * cout);
    for (int nn = 0; nn < v.n; ++nn)
      for (int co = 0; co < cout; ++co)
        for (int oi = 0; oi < oh; ++oi)
          for (int oj = 0; oj < ow; ++oj)
            gmat[((static_cast<std::size_t>(nn) * oh + oi) * ow + oj) * cout + co] =
                self->grad[((static_cast<std::size_t>(nn) * cout + co) * oh + oi) * ow + oj];

    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < cols_n; ++r)
        for (int co = 0; co < cout; ++co) pb->grad[co] += gmat[r * cout + co];
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      MapC mg(gmat.data(), static_cast<Eigen::Index>(cols_n), cout);
      MapC mc(cols.data(), static_cast<Eigen::Index>(cols_n), kvol);
      MapM gw(pw->grad.data(), cout, kvol);
      gw.noalias() += mg.transpose() * mc;
    }
    if (px->requires_grad) {
      px->ensure_grad();
      std::vector<double> gcols(cols_n * static_cast<std::size_t>(kvol));
      MapC mg(gmat.data(), static_cast<Eigen::Index>(cols_n), cout);
      MapC mw(pw->val.data(), cout, kvol);
      MapM gc(gcols.data(), static_cast<Eigen::Index>(cols_n), kvol);
      gc.noalias() = mg * mw;
      for (int nn = 0; nn < v.n; ++nn)
        for (int oi = 0; oi < oh; ++oi)
          for (int oj = 0; oj < ow; ++oj) {
            const double* row =
                gcols.data() +
                ((static_cast<std::size_t>(nn) * oh + oi) * ow + oj) * kvol;
            for (int ci = 0; ci < cin; ++ci)
              for (int ki = 0; ki < kh; ++ki) {
                const int ii = oi * stride - pad + ki;
                if (ii < 0 || ii >= v.h) continue;
                for (int kj = 0; kj < kw; ++kj) {
                  const int jj = oj * stride - pad + kj;
                  if (jj < 0 || jj >= v.w) continue;
                  px->grad[((static_cast<std::size_t>(nn) * v.c + ci) * v.h + ii) * v.w + jj] +=
                      row[(ci * kh + ki) * kw + kj];
                }
              }
          }
    }
  };
  return t;
}

Tensor conv_transpose2x(const Tensor& x, const Tensor& w, const Tensor& b) {
  const SpatialView v = spatial_view(x, "conv_transpose2x");
  if (w.ndim() != 4 || w.dim(2) != 2 || w.dim(3) != 2)
    throw ShapeError("conv_transpose2x: weight must be (Cin,Cout,2,2)");
  const int cin = w.dim(0), cout = w.dim(1);
  if (cin != v.c)
    throw ShapeError(str_cat("conv_transpose2x: input channels ", v.c,
                             " != weight channels ", cin));
  if (b.defined() && b.numel() != cout)
    throw ShapeError("conv_transpose2x: bias size must equal output channels");
  const int oh = 2 * v.h, ow = 2 * v.w;
  std::vector<double> out(static_cast<std::size_t>(v.n) * cout * oh * ow, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  // out[n,co,2i+di,2j+dj] = sum_ci x[n,ci,i,j] * w[ci,co,di,dj] + b[co]
  for (int nn = 0; nn < v.n; ++nn)
    for (int di = 0; di < 2; ++di)
      for (int dj = 0; dj < 2; ++dj) {
        // (h*w, cin) x (cin, cout) per tap
        std::vector<double> xmat(static_cast<std::size_t>(v.h) * v.w * cin);
        for (int ci = 0; ci < cin; ++ci)
          for (int i = 0; i < v.h; ++i)
            for (int j = 0; j < v.w; ++j)
              xmat[(static_cast<std::size_t>(i) * v.w + j) * cin + ci] =
                  xv[((static_cast<std::size_t>(nn) * cin + ci) * v.h + i) * v.w + j];
        std::vector<double> wmat(static_cast<std::size_t>(cin) * cout);
        for (int ci = 0; ci < cin; ++ci)
          for (int co = 0; co < cout; ++co)
            wmat[static_cast<std::size_t>(ci) * cout + co] =
                wv[((static_cast<std::size_t>(ci) * cout + co) * 2 + di) * 2 + dj];
        std::vector<double> omat(static_cast<std::size_t>(v.h) * v.w * cout);
        MapC mx(xmat.data(), static_cast<Eigen::Index>(v.h) * v.w, cin);
        MapC mw(wmat.data(), cin, cout);
        MapM mo(omat.data(), static_cast<Eigen::Index>(v.h) * v.w, cout);
        mo.noalias() = mx * mw;
        for (int co = 0; co < cout; ++co)
          for (int i = 0; i < v.h; ++i)
            for (int j = 0; j < v.w; ++j)
              out[((static_cast<std::size_t>(nn) * cout + co) * oh + 2 * i + di) * ow +
                  2 * j + dj] =
                  omat[(static_cast<std::size_t>(i) * v.w + j) * cout + co] +
                  (b.defined() ? b.values()[co] : 0.0);
      }

  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  Tensor t = make_node(spatial_shape(v, cout, oh, ow), std::move(out), parents);
  Node* self = t.node();
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = b.defined() ? b.node() : nullptr;
  self->backprop = [self, px, pw, pb, v, cin, cout, oh, ow]() {
    const bool need_x = px->requires_grad;
    const bool need_w = pw->requires_grad;
    if (need_x) px->ensure_grad();
    if (need_w) pw->ensure_grad();
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      for (int nn = 0; nn < v.n; ++nn)
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          const std::size_t base = (static_cast<std::size_t>(nn) * cout + co) *
                                   static_cast<std::size_t>(oh) * ow;
          for (std::size_t k = 0; k < static_cast<std::size_t>(oh) * ow; ++k)
            s += self->grad[base + k];
          pb->grad[co] += s;
        }
    }
    if (!need_x && !need_w) return;
    for (int nn = 0; nn < v.n; ++nn)
      for (int ci = 0; ci < cin; ++ci)
        for (int i = 0; i < v.h; ++i)
          for (int j = 0; j < v.w; ++j) {
            const std::size_t xoff =
                ((static_cast<std::size_t>(nn) * cin + ci) * v.h + i) * v.w + j;
            const double xval = px->val[xoff];
            double gx = 0.0;
            for (int co = 0; co < cout; ++co)
              for (int di = 0; di < 2; ++di)
                for (int dj = 0; dj < 2; ++dj) {
                  const double g =
                      self->grad[((static_cast<std::size_t>(nn) * cout + co) * oh +
                                  2 * i + di) * ow + 2 * j + dj];
                  const std::size_t woff =
                      ((static_cast<std::size_t>(ci) * cout + co) * 2 + di) * 2 + dj;
                  if (need_x) gx += g * pw->val[woff];
                  if (need_w) pw->grad[woff] += g * xval;
                }
            if (need_x) px->grad[xoff] += gx;
          }
  };
  return t;
}

Tensor upsample_nearest2x(const Tensor& x) {
  const SpatialView v = spatial_view(x, "upsample_nearest2x");
  const int oh = 2 * v.h, ow = 2 * v.w;
  std::vector<double> out(static_cast<std::size_t>(v.n) * v.c * oh * ow);
  const auto& xv = x.values();
  for (int nc = 0; nc < v.n * v.c; ++nc)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        out[(static_cast<std::size_t>(nc) * oh + i) * ow + j] =
            xv[(static_cast<std::size_t>(nc) * v.h + i / 2) * v.w + j / 2];
  Tensor t = make_node(spatial_shape(v, v.c, oh, ow), std::move(out), {x});
  Node* self = t.node();
  Node* px = x.node();
  self->backprop = [self, px, v, oh, ow]() {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int nc = 0; nc < v.n * v.c; ++nc)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          px->grad[(static_cast<std::size_t>(nc) * v.h + i / 2) * v.w + j / 2] +=
              self->grad[(static_cast<std::size_t>(nc) * oh + i) * ow + j];
  };
  return t;
}

Tensor roi_bilinear(const Tensor& feat, const Tensor& box, int out_h, int out_w,
                    double stride) {
  if (feat.ndim() != 3) throw ShapeError("roi_bilinear: features must be (C,H,W)");
  if (box.numel() != 4) throw ShapeError("roi_bilinear: box must have 4 entries");
  const int c = feat.dim(0), fh = feat.dim(1), fw = feat.dim(2);
  const double x0 = box.values()[0], y0 = box.values()[1];
  const double x1 = box.values()[2], y1 = box.values()[3];
  if (!(x1 > x0) || !(y1 > y0))
    throw Error(str_cat("roi_bilinear: degenerate box (", x0, ",", y0, ",", x1,
                        ",", y1, ")"));
  const double bw = x1 - x0, bh = y1 - y0;

  // Per output cell: image point -> feature grid point -> 4-tap lerp.
  struct Tap {
    int i0, i1, j0, j1;
    double au, av;  // fractional parts
    double dudx0, dudx1, dvdy0, dvdy1;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
  for (int oi = 0; oi < out_h; ++oi)
    for (int oj = 0; oj < out_w; ++oj) {
      const double ry = (oi + 0.5) / out_h;
      const double rx = (oj + 0.5) / out_w;
      const double yimg = y0 + ry * bh;
      const double ximg = x0 + rx * bw;
      const double u = ximg / stride - 0.5;
      const double vv = yimg / stride - 0.5;
      Tap t;
      const double uf = std::floor(u), vf = std::floor(vv);
      t.au = u - uf;
      t.av = vv - vf;
      t.j0 = std::clamp(static_cast<int>(uf), 0, fw - 1);
      t.j1 = std::clamp(static_cast<int>(uf) + 1, 0, fw - 1);
      t.i0 = std::clamp(static_cast<int>(vf), 0, fh - 1);
      t.i1 = std::clamp(static_cast<int>(vf) + 1, 0, fh - 1);
      t.dudx0 = (1.0 - rx) / stride;
      t.dudx1 = rx / stride;
      t.dvdy0 = (1.0 - ry) / stride;
      t.dvdy1 = ry / stride;
      taps[static_cast<std::size_t>(oi) * out_w + oj] = t;
    }

  std::vector<double> out(static_cast<std::size_t>(c) * out_h * out_w);
  const auto& fv = feat.values();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = fv.data() + static_cast<std::size_t>(ch) * fh * fw;
    double* op = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (std::size_t k = 0; k < taps.size(); ++k) {
      const Tap& t = taps[k];
      const double v00 = plane[t.i0 * fw + t.j0], v01 = plane[t.i0 * fw + t.j1];
      const double v10 = plane[t.i1 * fw + t.j0], v11 = plane[t.i1 * fw + t.j1];
      op[k] = (1 - t.av) * ((1 - t.au) * v00 + t.au * v01) +
              t.av * ((1 - t.au) * v10 + t.au * v11);
    }
  }
  Tensor t = make_node({c, out_h, out_w}, std::move(out), {feat, box});
  Node* self = t.node();
  Node* pf = feat.node();
  Node* pbox = box.node();
  self->backprop = [self, pf, pbox, c, fh, fw, out_h, out_w,
                    taps = std::move(taps)]() {
    const bool need_f = pf->requires_grad;
    const bool need_b = pbox->requires_grad;
    if (need_f) pf->ensure_grad();
    if (need_b) pbox->ensure_grad();
    if (!need_f && !need_b) return;
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = pf->val.data() + static_cast<std::size_t>(ch) * fh * fw;
      double* gplane = need_f ? pf->grad.data() + static_cast<std::size_t>(ch) * fh * fw
                              : nullptr;
      const double* g = self->grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
      for (std::size_t k = 0; k < taps.size(); ++k) {
        const Tap& t = taps[k];
        const double gk = g[k];
        if (gk == 0.0) continue;
        const double v00 = plane[t.i0 * fw + t.j0], v01 = plane[t.i0 * fw + t.j1];
        const double v10 = plane[t.i1 * fw + t.j0], v11 = plane[t.i1 * fw + t.j1];
        if (need_f) {
          gplane[t.i0 * fw + t.j0] += gk * (1 - t.av) * (1 - t.au);
          gplane[t.i0 * fw + t.j1] += gk * (1 - t.av) * t.au;
          gplane[t.i1 * fw + t.j0] += gk * t.av * (1 - t.au);
          gplane[t.i1 * fw + t.j1] += gk * t.av * t.au;
        }
        if (need_b) {
          const double dval_du = (1 - t.av) * (v01 - v00) + t.av * (v11 - v10);
          const double dval_dv = (1 - t.au) * (v10 - v00) + t.au * (v11 - v01);
          pbox->grad[0] += gk * dval_du * t.dudx0;
          pbox->grad[2] += gk * dval_du * t.dudx1;
          pbox->grad[1] += gk * dval_dv * t.dvdy0;
          pbox->grad[3] += gk * dval_dv * t.dvdy1;
        }
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// fused losses
// ---------------------------------------------------------------------------

Tensor bce_with_logits_mean(const Tensor& logits, std::vector<double> targets) {
  if (targets.size() != logits.values().size())
    throw ShapeError("bce_with_logits_mean: target size mismatch");
  const auto& z = logits.values();
  const double n = static_cast<double>(z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // max(z,0) - z*t + log(1+exp(-|z|))
    loss += std::max(z[i], 0.0) - z[i] * targets[i] +
            std::log1p(std::exp(-std::abs(z[i])));
  }
  Tensor t = make_node({1}, {loss / n}, {logits});
  Node* self = t.node();
  Node* pz = logits.node();
  self->backprop = [self, pz, targets = std::move(targets), n]() {
    if (!pz->requires_grad) return;
    pz->ensure_grad();
    for (std::size_t i = 0; i < pz->val.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-pz->val[i]));
      pz->grad[i] += self->grad[0] * (s - targets[i]) / n;
    }
  };
  return t;
}

Tensor focal_from_logits(const Tensor& logits, std::vector<char> positive,
                         double alpha, double gamma) {
  if (positive.size() != logits.values().size())
    throw ShapeError("focal_from_logits: mask size mismatch");
  const auto& z = logits.values();
  const double n = static_cast<double>(z.size());
  // With w = -z for positives, +z for negatives:
  //   p = sigmoid(-w), 1-p = sigmoid(w), -log p = softplus(w)
  //   term = alpha * sigmoid(w)^gamma * softplus(w)
  auto sig = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  auto sp = [](double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
  };
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double w = positive[i] ? -z[i] : z[i];
    loss += alpha * std::pow(sig(w), gamma) * sp(w);
  }
  Tensor t = make_node({1}, {loss / n}, {logits});
  Node* self = t.node();
  Node* pz = logits.node();
  self->backprop = [self, pz, positive = std::move(positive), alpha, gamma, n,
                    sig, sp]() {
    if (!pz->requires_grad) return;
    pz->ensure_grad();
    for (std::size_t i = 0; i < pz->val.size(); ++i) {
      const double w = positive[i] ? -pz->val[i] : pz->val[i];
      const double s = sig(w);
      const double dterm_dw =
          alpha * std::pow(s, gamma) * (gamma * (1.0 - s) * sp(w) + s);
      const double dw_dz = positive[i] ? -1.0 : 1.0;
      pz->grad[i] += self->grad[0] * dterm_dw * dw_dz / n;
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// control flow
// ---------------------------------------------------------------------------

Tensor stop_gradient(const Tensor& a) {
  Tensor t = make_node(a.shape(), a.values(), {});
  // No parents: the graph ends here. Forward values are byte-identical.
  return t;
}

void backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ShapeError("backward: root must be a scalar");
  Node* r = root.node();
  if (!r->requires_grad) return;

  // Iterative topological order over the parent DAG.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() == n->val.size()) n->backprop();
  }
}

}  // namespace stspot::ad
