#pragma once
#include <array>
#include <cmath>

#include "rlp/model.hpp"
#include "rlp/ode.hpp"
#include "rlp/params.hpp"
#include "rlp/series.hpp"

namespace rlp {

// Two-parameter local solution of the (d, w, chi) flow at Y = 0.  The free
// data are the quadratic density coefficient d2 (coefficient of Y^2 in d)
// and the linear velocity coefficient w1; the gauge fixes chi(0) = 1 and
// the flow forces w(0) = 1, d(0) = d'(0) = 0.
struct YZeroSeries {
  double d2 = 0, w1 = 0;
  Series d, w, chi;   // coefficients in Y; d starts at order 2
  double radius = 0;  // common convergence-radius estimate
  double Y0 = 0;      // handoff offset: min(0.9 * radius, 0.05)
  std::array<double, 3> eval(double Y) const;        // (d, w, chi)
  std::array<double, 3> eval_deriv(double Y) const;  // d/dY of the same
};

// Coefficient k of the residual triple (E_d, E_w, E_chi)[k] obtained by
// substituting truncated series into the flow equations multiplied through
// by their denominators:
//   E_d   = Y C d' - 2 chi^2 d (w+eps)^2 (d-w)
//   E_w   = (1-eps) Y C w' + C (w+eps)(1-3w) + 2(1+eps) chi^2 w (w+eps)^2 (d-w)
//   E_chi = (1-eps) Y chi' - (1-w) chi
// where C = (d/Y^2)^-eta Y^2 - chi^2 [(w+eps)^2 - eps(w-1)^2 + 4 eps w d].
// Setting coefficient k of each to zero is the recursion that determines
// the order-k coefficients; exposed so tests can probe the leading factors.
std::array<double, 3> yzero_residual(const Series& d, const Series& w,
                                     const Series& chi, int k,
                                     const ModelParams& P);

// Assembles the series to order N_max.  Requires d2 > 1 and w1 < 0.
YZeroSeries y_zero_series(double d2, double w1, const ModelParams& P,
                          int N_max = 40);

// The far-field density constant is quoted as lim D^(1+eta) x^2; the
// coefficient of Y^2 in d is its (1+eta)-th root.
inline double chart_d2(double d2_farfield, const ModelParams& P) {
  return std::pow(d2_farfield, 1.0 / P.one_plus_eta);
}

struct ExtensionConfig {
  double w_switch = 1e2;  // hand over to the reciprocal velocity here
  double w_cap = 1e6;     // stop once w reaches this
  double Y_floor = -5.0;  // reaching this without blow-up is an error
  double Y_pos_end = 4.0; // right integration bound (sonic stop comes first)
  double rtol = 1e-10, atol = 1e-13;
  int N_max = 40;
  int n_fit = 48;  // sample count for the blow-up exponent fits
};

// Continuation of the flow across Y = 0: series patch on [-Y0, Y0],
// integration left to the massive singularity and right to the sonic line.
// The left integration runs in (d, w, chi) until w = w_switch, then in the
// reciprocal velocity u = 1/w (linear to leading order at the blow-up)
// until u = 1/w_cap.
struct Extension {
  YZeroSeries series;
  Trajectory<3> neg_a;  // (d, w, chi) on [Y_switch, -Y0]
  Trajectory<3> neg_b;  // (d, u, chi) on [Y_stop, Y_switch]
  Trajectory<3> pos;    // (d, w, chi) on [+Y0, Y_stop_pos]
  double Y_switch = 0;
  double Y_stop = 0;              // leftmost computed point (w = w_cap)
  double Y_ms = 0;                // extrapolated blow-up location
  double w_hat = 0, d_hat = 0;    // w ~ w_hat/(Y-Y_ms), d ~ d_hat/(Y-Y_ms)
  double Q0 = 0;                  // d/w at the last computed sample
  double chi_exp = 0, chi_hat = 0;  // chi ~ chi_hat (Y-Y_ms)^chi_exp
  double d_exp = 0, w_exp = 0;      // fitted power of (Y-Y_ms); both -> -1
  double e2lam_exp = 0;             // fitted radial-metric blow-up power
  double Y_sp = 0;  // positive-side sonic-line coordinate (C = 0 there)

  std::array<double, 3> state(double Y) const;  // (d, w, chi) anywhere computed
  double C_of(double Y, const ModelParams& P) const;
};

Extension extend(const YZeroSeries& series, const ModelParams& P,
                 const ExtensionConfig& cfg = {});

// Fits Y_ms, the blow-up strengths and the vanishing/blow-up exponents from
// the reciprocal-velocity piece; called by extend(), exposed for reuse.
void fit_ms_asymptotics(Extension& ext, const ModelParams& P,
                        const ExtensionConfig& cfg = {});

}  // namespace rlp
