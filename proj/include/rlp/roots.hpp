#pragma once
#include <cmath>
#include <functional>
#include <limits>

#include "rlp/errors.hpp"

namespace rlp {

// Brent's method on a sign-changing bracket.  xtol is absolute.
template <class F>
double brent(F&& f, double a, double b, double xtol, int max_iter = 200) {
  double fa = f(a), fb = f(b);
  if (fa == 0) return a;
  if (fb == 0) return b;
  if (fa * fb > 0) throw BracketLost("brent: no sign change on bracket");
  double c = a, fc = fa, d = b - a, e = d;
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) + 0.5 * xtol;
    const double m = 0.5 * (c - b);
    if (std::abs(m) <= tol || fb == 0.0) return b;
    if (std::abs(e) < tol || std::abs(fa) <= std::abs(fb)) {
      d = e = m;  // bisection
    } else {
      double p, q, r, s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        q = fa / fc; r = fb / fc;
        p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0) q = -q; else p = -p;
      if (2.0 * p < std::min(3.0 * m * q - std::abs(tol * q), std::abs(e * q))) {
        e = d; d = p / q;
      } else {
        d = e = m;
      }
    }
    a = b; fa = fb;
    b += (std::abs(d) > tol) ? d : (m > 0 ? tol : -tol);
    fb = f(b);
    if ((fb > 0) == (fc > 0)) { c = a; fc = fa; d = e = b - a; }
  }
  throw RootFailure("brent: no convergence");
}

// Newton iteration safeguarded by a maintained bracket; falls back to
// bisection whenever the Newton update leaves the bracket or stalls.
// fdf returns {f(x), f'(x)}.
template <class FDF>
double newton_safe(FDF&& fdf, double x0, double lo, double hi, double xtol,
                   int max_iter = 100) {
  auto [flo, dlo] = fdf(lo);
  (void)dlo;
  if (flo == 0) return lo;
  auto [fhi, dhi] = fdf(hi);
  (void)dhi;
  if (fhi == 0) return hi;
  if (flo * fhi > 0) throw BracketLost("newton_safe: no sign change on bracket");
  double x = std::clamp(x0, lo, hi);
  for (int it = 0; it < max_iter; ++it) {
    auto [fx, dx] = fdf(x);
    if (fx == 0) return x;
    if ((fx > 0) == (fhi > 0)) { hi = x; fhi = fx; } else { lo = x; flo = fx; }
    double step = (dx != 0) ? fx / dx : std::numeric_limits<double>::infinity();
    double xn = x - step;
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::abs(xn - x) <= xtol * (1.0 + std::abs(xn))) return xn;
    x = xn;
  }
  throw RootFailure("newton_safe: no convergence");
}

// Plain Newton without a bracket (used where the iterate is known to stay in
// the basin); throws RootFailure after max_iter.
template <class FDF>
double newton_plain(FDF&& fdf, double x0, double xtol, int max_iter = 50) {
  double x = x0;
  for (int it = 0; it < max_iter; ++it) {
    auto [fx, dx] = fdf(x);
    if (dx == 0) throw RootFailure("newton: zero derivative");
    const double xn = x - fx / dx;
    if (std::abs(xn - x) <= xtol * (1.0 + std::abs(xn))) return xn;
    x = xn;
  }
  throw RootFailure("newton: no convergence");
}

}  // namespace rlp
