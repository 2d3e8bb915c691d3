#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ssmil/tensor.hpp"

namespace ssmil {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference verification of reverse-mode gradients. `f` must build a
// fresh graph from the given leaves and return a scalar; it is evaluated once
// analytically and twice per coordinate for the finite difference. The error
// per coordinate is |analytic - numeric| / max(1, |analytic|).
inline GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  std::vector<Tensor>& params, double eps = 1e-5) {
  contract(eps > 0.0, "grad_check: eps must be positive");
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = f(params);
  contract(loss.rows() == 1 && loss.cols() == 1, "grad_check: f must return a scalar");
  contract(std::isfinite(loss.value()(0, 0)), "grad_check: f returned non-finite loss");
  backward(loss);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    const auto& node = p.node();
    analytic.push_back(node->grad.size() == node->value.size()
                           ? node->grad
                           : Matrix::Zero(p.rows(), p.cols()));
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    for (Index i = 0; i < p.size(); ++i) {
      const double saved = p.flat(i);
      p.set_flat(i, saved + eps);
      const double up = f(params).value()(0, 0);
      p.set_flat(i, saved - eps);
      const double down = f(params).value()(0, 0);
      p.set_flat(i, saved);
      if (!std::isfinite(up) || !std::isfinite(down))
        throw ContractViolation("grad_check: non-finite value at param " + std::to_string(k) +
                                " coordinate " + std::to_string(i));
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k](i / p.cols(), i % p.cols());
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = k;
        report.worst_coord = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double grad_check_max_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                   std::vector<Tensor>& params, double eps = 1e-5) {
  return grad_check(f, params, eps).max_rel_error;
}

}  // namespace ssmil
