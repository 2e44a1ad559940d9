#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "avgtime/tensor.hpp"

namespace avgtime {

namespace detail {

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

inline double checked_item(const Tensor& t) {
  const double v = t.item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite function value");
  return v;
}

}  // namespace detail

// Compares reverse-mode gradients of a scalar function against central
// differences (f(x+eps) - f(x-eps)) / 2eps. Returns the largest relative
// error |a - n| / max(|a|, |n|, 1e-8) over all components of x.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tensor var = x.clone(/*requires_grad=*/true);
  Tensor loss = f(var);
  detail::checked_item(loss);
  backward(loss);
  std::vector<double> analytic(var.size(), 0.0);
  if (var.has_grad()) analytic.assign(var.grad().begin(), var.grad().end());

  std::vector<double> probe(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = detail::checked_item(f(Tensor(x.shape(), probe)));
    probe[i] = orig - eps;
    const double down = detail::checked_item(f(Tensor(x.shape(), probe)));
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(analytic[i])) throw std::domain_error("grad_check: non-finite analytic gradient");
    worst = std::max(worst, detail::relative_error(analytic[i], numeric));
  }
  return worst;
}

// Same check over a set of leaf parameters that `loss_fn` closes over. Leaves
// are perturbed in place and restored; `loss_fn` must rebuild its graph per call.
inline double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, double eps = 1e-5) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = loss_fn();
  detail::checked_item(loss);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.size(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto values = leaves[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = detail::checked_item(loss_fn());
      values[i] = orig - eps;
      const double down = detail::checked_item(loss_fn());
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(analytic[k][i])) throw std::domain_error("grad_check: non-finite analytic gradient");
      worst = std::max(worst, detail::relative_error(analytic[k][i], numeric));
    }
  }
  return worst;
}

}  // namespace avgtime
