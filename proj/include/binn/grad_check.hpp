#pragma once

#include <functional>

#include "binn/tape.hpp"

namespace binn::ad {

/// A scalar function of one parameter tensor, built on a tape.
using ScalarFn = std::function<Var(Tape&, Var theta)>;

/// Compares the tape gradient of f at theta against central finite
/// differences with step h. Returns the max over parameters of
///   |analytic - (f(theta+h e_i) - f(theta-h e_i)) / 2h| / (|analytic| + 1e-12).
double grad_check(const ScalarFn& f, const Tensor& theta, double h);

/// Same check for a black-box value function against a precomputed gradient.
/// Used where the analytic gradient comes from a larger system (e.g. a full
/// model loss over many parameter tensors flattened into theta).
double grad_check_against(const std::function<double(const Tensor&)>& value_fn,
                          const Tensor& theta, const Tensor& analytic_grad, double h);

}  // namespace binn::ad
