#ifndef STSPOT_GRADCHECK_HPP_
#define STSPOT_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "stspot/tensor.hpp"

namespace stspot::train {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_coordinate;
  bool nondifferentiable_point = false;
  long long coords_checked = 0;
};

/// Central finite differences against reverse-mode gradients. `build` must
/// reconstruct the scalar objective from the current values of `wrt`; every
/// coordinate of every `wrt` tensor is perturbed. Asymmetric secants flag a
/// non-differentiable sample point instead of silently passing.
GradCheckReport finite_difference_gradcheck(
    const std::function<ad::Tensor()>& build, const std::vector<ad::Tensor>& wrt,
    double eps = 1e-5);

struct RegisteredCheck {
  std::string name;
  std::function<GradCheckReport()> run;
};

/// Every differentiable operation of the backbone, encoder, SAME module and
/// heads at tiny configurations, plus harness self-tests.
std::vector<RegisteredCheck> gradcheck_registry(std::uint64_t seed);

}  // namespace stspot::train

#endif  // STSPOT_GRADCHECK_HPP_
