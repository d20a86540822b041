#include "binn/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace binn::ad {

double grad_check_against(const std::function<double(const Tensor&)>& value_fn,
                          const Tensor& theta, const Tensor& analytic_grad, double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  if (!theta.same_shape(analytic_grad))
    throw std::invalid_argument("grad_check: gradient shape mismatch");

  double max_rel = 0.0;
  Tensor probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = value_fn(probe);
    probe[i] = saved - h;
    const double fm = value_fn(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite function evaluation");
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic_grad[i] - numeric) /
                       (std::abs(analytic_grad[i]) + 1e-12);
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

double grad_check(const ScalarFn& f, const Tensor& theta, double h) {
  Tape tape;
  Var th = tape.leaf(theta, true);
  Var loss = f(tape, th);
  if (tape.value(loss).size() != 1)
    throw std::invalid_argument("grad_check: f must return a scalar");
  tape.backward(loss);
  const Tensor analytic = tape.grad(th);

  auto value_fn = [&f](const Tensor& t) {
    Tape fresh;
    Var v = fresh.leaf(t, false);
    return fresh.value(f(fresh, v))[0];
  };
  return grad_check_against(value_fn, theta, analytic, h);
}

}  // namespace binn::ad
