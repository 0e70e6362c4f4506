#pragma once
#include <cmath>
#include <cstddef>
#include <vector>

#include "rlp/errors.hpp"
#include "rlp/fit.hpp"

namespace rlp {

// Truncated power-series helpers; a Series holds coefficients c[0..n].
using Series = std::vector<double>;

inline Series series_mul(const Series& a, const Series& b, std::size_t keep) {
  Series c(keep + 1, 0.0);
  const std::size_t na = a.size(), nb = b.size();
  for (std::size_t i = 0; i < na && i <= keep; ++i) {
    if (a[i] == 0) continue;
    const std::size_t jmax = std::min(nb, keep + 1 - i);
    for (std::size_t j = 0; j < jmax; ++j) c[i + j] += a[i] * b[j];
  }
  return c;
}

inline void series_axpy(Series& y, const Series& x, double s) {
  if (y.size() < x.size()) y.resize(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

// Coefficients of a(z)^alpha given a[0] > 0, via the standard power
// recurrence  j a0 A_j = sum_{k=1..j} (k(1+alpha) - j) a_k A_{j-k}.
inline Series series_pow(const Series& a, double alpha, std::size_t keep) {
  if (a.empty() || !(a[0] > 0))
    throw RecursionSingular("series_pow: nonpositive leading coefficient");
  Series A(keep + 1, 0.0);
  A[0] = std::pow(a[0], alpha);
  for (std::size_t j = 1; j <= keep; ++j) {
    double acc = 0;
    for (std::size_t k = 1; k <= j; ++k) {
      const double ak = (k < a.size()) ? a[k] : 0.0;
      if (ak != 0) acc += (k * (1.0 + alpha) - static_cast<double>(j)) * ak * A[j - k];
    }
    A[j] = acc / (static_cast<double>(j) * a[0]);
  }
  return A;
}

inline double series_eval(const Series& c, double z) {
  double acc = 0;
  for (std::size_t i = c.size(); i-- > 0;) acc = acc * z + c[i];
  return acc;
}

inline double series_eval_deriv(const Series& c, double z) {
  double acc = 0;
  for (std::size_t i = c.size(); i-- > 1;) acc = acc * z + c[i] * static_cast<double>(i);
  return acc;
}

// Growth model |c_N| ~ C^(N-alpha) / N^3: fitting log|c_N| + 3 log N against
// N gives slope log C, hence convergence radius 1/C.
struct RadiusFit {
  double radius = 0, C = 0, alpha = 0, r2 = 0;
};

inline RadiusFit fit_radius(const Series& c, std::size_t first, std::size_t last) {
  std::vector<double> ns, ys;
  for (std::size_t n = first; n <= last && n < c.size(); ++n) {
    if (c[n] == 0) continue;
    ns.push_back(static_cast<double>(n));
    ys.push_back(std::log(std::abs(c[n])) + 3.0 * std::log(static_cast<double>(n)));
  }
  if (ns.size() < 4) throw FitFailure("fit_radius: too few nonzero coefficients");
  const LineFit lf = fit_line(ns, ys);
  RadiusFit out;
  out.C = std::exp(lf.slope);
  out.radius = 1.0 / out.C;
  out.alpha = -lf.intercept / lf.slope;
  out.r2 = lf.r2;
  return out;
}

}  // namespace rlp
