#pragma once
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rlp/errors.hpp"

namespace rlp {

struct LineFit {
  double slope = 0, intercept = 0;
  double r2 = 0;           // coefficient of determination
  double max_rel_resid = 0;  // max |resid| / max |y|
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw FitFailure("fit_line: need >=2 points");
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) { sx += x[i]; sy += y[i]; }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw FitFailure("fit_line: degenerate abscissae");
  LineFit out;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double ssr = 0, ymax = 0, rmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (out.intercept + out.slope * x[i]);
    ssr += r * r;
    ymax = std::max(ymax, std::abs(y[i]));
    rmax = std::max(rmax, std::abs(r));
  }
  out.r2 = (syy > 0) ? 1.0 - ssr / syy : 1.0;
  out.max_rel_resid = (ymax > 0) ? rmax / ymax : rmax;
  return out;
}

// Least-squares quadratic y = c0 + c1 u + c2 u^2; returns {c0,c1,c2}.
inline std::array<double, 3> fit_quad(const std::vector<double>& u,
                                      const std::vector<double>& y) {
  const std::size_t n = u.size();
  if (n < 3 || y.size() != n) throw FitFailure("fit_quad: need >=3 points");
  // normal equations for the 3x3 system
  double s[5] = {0, 0, 0, 0, 0}, t[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    double p = 1;
    for (int k = 0; k < 5; ++k) { s[k] += p; if (k < 3) t[k] += p * y[i]; p *= u[i]; }
  }
  double A[3][3] = {{s[0], s[1], s[2]}, {s[1], s[2], s[3]}, {s[2], s[3], s[4]}};
  double b[3] = {t[0], t[1], t[2]};
  // Gaussian elimination with partial pivoting
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    if (A[piv][c] == 0) throw FitFailure("fit_quad: singular normal equations");
    if (piv != c) { std::swap(A[piv], A[c]); std::swap(b[piv], b[c]); }
    for (int r = c + 1; r < 3; ++r) {
      const double m = A[r][c] / A[c][c];
      for (int k = c; k < 3; ++k) A[r][k] -= m * A[c][k];
      b[r] -= m * b[c];
    }
  }
  std::array<double, 3> out{};
  for (int r = 2; r >= 0; --r) {
    double acc = b[r];
    for (int k = r + 1; k < 3; ++k) acc -= A[r][k] * out[k];
    out[r] = acc / A[r][r];
  }
  return out;
}

// Root of the parabola through three points (xi, yi), taken on the side of
// the sign change between the outer samples.
inline double quad_root_3pt(double x0, double y0, double x1, double y1,
                            double x2, double y2) {
  // Newton divided differences: y = y0 + d1 (x-x0) + d2 (x-x0)(x-x1)
  const double d1 = (y1 - y0) / (x1 - x0);
  const double d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
  // quadratic a t^2 + b t + c in t = x - x1 (expanded about middle point)
  const double a = d2;
  const double b = d1 + d2 * (x1 - x0);
  const double c = y1;
  if (a == 0) {
    if (b == 0) throw FitFailure("quad_root_3pt: flat data");
    return x1 - c / b;
  }
  const double disc = b * b - 4 * a * c;
  if (disc < 0) throw FitFailure("quad_root_3pt: complex roots");
  const double sq = std::sqrt(disc);
  const double q = (b >= 0) ? -0.5 * (b + sq) : -0.5 * (b - sq);
  const double r1 = q / a, r2 = (q != 0) ? c / q : r1;
  // prefer the root inside [min(x0,x2), max(x0,x2)]
  const double lo = std::min(x0, x2) - x1, hi = std::max(x0, x2) - x1;
  const bool in1 = (r1 >= lo && r1 <= hi), in2 = (r2 >= lo && r2 <= hi);
  double t;
  if (in1 && (!in2 || std::abs(r1) <= std::abs(r2))) t = r1;
  else if (in2) t = r2;
  else t = (std::abs(r1) <= std::abs(r2)) ? r1 : r2;
  return x1 + t;
}

}  // namespace rlp
