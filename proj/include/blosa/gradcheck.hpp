#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "blosa/param_store.hpp"

namespace blosa {

/// The function under test returned different values for the same input.
class NonDeterministicError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;  // empty for single-tensor checks
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coordinates = 0;
  double max_abs_error = 0.0;  // max |analytic - numeric| over all coordinates
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

template <typename Scalar>
using TensorLoss = std::function<Var<Scalar>(Graph<Scalar>&, const Var<Scalar>& theta)>;

template <typename Scalar>
using ModelLoss = std::function<Var<Scalar>(ParamBinder<Scalar>&)>;

// Central differences (f(t + h e) - f(t - h e)) / 2h against the taped
// gradient, coordinate by coordinate.
template <typename Scalar>
GradCheckReport finite_difference_check(const TensorLoss<Scalar>& f, const Tensor<Scalar>& theta,
                                        double step);

/// Same check over every parameter in `store` (perturbed in place, restored on exit).
template <typename Scalar>
GradCheckReport finite_difference_check(const ModelLoss<Scalar>& f, ParamStore<Scalar>& store,
                                        double step);

}  // namespace blosa
