#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gaisnet/param.hpp"

namespace gaisnet {

/// Relative error with a floor on the denominator so entries whose true
/// gradient is ~0 are judged on absolute error.
template <typename Scalar>
Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor = Scalar(1e-6)) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline void check_fd_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2))
    throw std::invalid_argument("fd_check: eps must lie in (0, 1e-2]");
}

/// Central-difference check of `grad(x)` against `f`. Returns the max
/// relative error over all entries.
template <typename Scalar, typename F, typename G>
Scalar fd_check(F&& f, G&& grad, const Tensor<Scalar>& x, Scalar eps) {
  check_fd_eps(eps);
  const Tensor<Scalar> analytic = grad(x);
  if (analytic.rows() != x.rows() || analytic.cols() != x.cols())
    throw ShapeError("fd_check: gradient shape differs from input shape");
  Tensor<Scalar> probe = x;
  Scalar worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar saved = probe.data()[i];
    probe.data()[i] = saved + eps;
    const Scalar up = f(probe);
    probe.data()[i] = saved - eps;
    const Scalar down = f(probe);
    probe.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("fd_check: non-finite function value");
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2 * eps)));
  }
  return worst;
}

struct FdReport {
  double max_rel_error = 0.0;
  long checked = 0;         // entries compared
  long frozen_skipped = 0;  // entries of frozen params, excluded
  bool frozen_grad_zero = true;
};

/// Checks analytic gradients of a set of params in place. `loss` evaluates the
/// objective at the current param values; `backward` zeroes and refills every
/// param's grad. Frozen params are excluded but their grads must be zero.
inline FdReport fd_check_params(const std::function<double()>& loss,
                                const std::function<void()>& backward,
                                const std::vector<ParamD*>& params, double eps) {
  check_fd_eps(eps);
  backward();
  FdReport report;
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (const ParamD* p : params) analytic.push_back(p->grad);
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamD& p = *params[k];
    if (p.frozen) {
      report.frozen_skipped += p.size();
      if (analytic[k].size() > 0 && analytic[k].cwiseAbs().maxCoeff() != 0.0) report.frozen_grad_zero = false;
      continue;
    }
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + eps;
      const double up = loss();
      p.value.data()[i] = saved - eps;
      const double down = loss();
      p.value.data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("fd_check: non-finite loss");
      report.max_rel_error = std::max(
          report.max_rel_error, relative_error(analytic[k].data()[i], (up - down) / (2 * eps)));
      ++report.checked;
    }
  }
  return report;
}

}  // namespace gaisnet
