#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "mixsep/autodiff.hpp"
#include "mixsep/errors.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::diffmath {

// Compares the tape's reverse-mode gradient of a scalar-valued function
// against central finite differences. Both paths run on the 64-bit tape:
// `f` must be callable as f(Tape<double>&, Tape<double>::Var) -> Var.
// Returns max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename F>
double finite_diff_check(F&& f, const BasicTensor<double>& x0, double eps) {
  BasicTensor<double> x = x0;
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape<double> tape;
    auto root = f(tape, tape.param(x));
    const auto& rv = tape.val(root);
    if (rv.numel() != 1) throw ShapeError("finite_diff_check: f must be scalar-valued, got " + shape_str(rv.shape()));
    if (!std::isfinite(rv[0])) throw NumericError("finite_diff_check: f(x) is non-finite");
    tape.backward(root);
  }
  const std::vector<double> analytic = x.grad();

  auto eval_at = [&](std::size_t coord, double delta) {
    BasicTensor<double> xp = x0;
    xp.data()[coord] += delta;
    Tape<double> tape;
    auto root = f(tape, tape.input(xp));
    const double v = tape.val(root)[0];
    if (!std::isfinite(v)) {
      throw NumericError("finite_diff_check: non-finite evaluation at coordinate " + std::to_string(coord));
    }
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    const double numeric = (eval_at(i, eps) - eval_at(i, -eps)) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

template <typename F>
double finite_diff_check(F&& f, const BasicTensor<float>& x0, double eps) {
  return finite_diff_check(std::forward<F>(f), tensor_cast<double>(x0), eps);
}

}  // namespace mixsep::diffmath
