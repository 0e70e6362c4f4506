#pragma once
#include <array>

#include "rlp/model.hpp"
#include "rlp/series.hpp"

namespace rlp {

// State at the sonic point x*: the degenerate root with D = W there.
struct SonicPoint {
  double xstar = 0;
  double W0 = 0;  // common value of D and W at x*
  double B0 = 0;  // residual of the sonic factor at the root (~0)
};

SonicPoint solve_sonic_state(double xstar, const ModelParams& P);

// Slopes at the sonic point.  W1 solves a cubic whose spurious branch is
// tracked from the pressureless limit; the physical branch is read off the
// deflated quadratic.
struct FirstOrder {
  double R1 = 0, W1 = 0;
  double W1_ghost = 0;
  std::array<double, 4> cubic{};  // c[0] + c[1] X + c[2] X^2 + c[3] X^3
  double disc_Q = 0;              // discriminant of the deflated quadratic
};

FirstOrder rlp_first_coeffs(const SonicPoint& sp, const ModelParams& P);

// Coefficient N of the two multiplied-through expansion identities for a
// fully specified series pair; vanishes on a valid expansion.
std::array<double, 2> window_residual_coeff(const Series& R, const Series& W, int N,
                                            double xstar, const ModelParams& P);
// Same for the center expansion: coefficient n1 of the first identity and
// n2 of the second.
std::array<double, 2> origin_residual_coeff(const Series& R, const Series& W, int n1,
                                            int n2, const ModelParams& P);

// Linear system  A v = rhs  fixing the order-N coefficient pair (R_N, W_N)
// of the expansion about x*.  Built by affine probing of the residuals, so
// it is exact for the truncated algebra; exposed for direct inspection.
struct OrderSystem {
  std::array<std::array<double, 2>, 2> A{};
  std::array<double, 2> rhs{};
  double det = 0;
};

// R, W hold the already-fixed coefficients 0..N-1.
OrderSystem window_order_system(const Series& R, const Series& W, int N,
                                double xstar, const ModelParams& P);

// Power series of (D, W) in z = x/x* - 1 on a trusted window around x*.
struct SonicWindow {
  double xstar = 0;
  SonicPoint point;
  FirstOrder first;
  Series R, W;        // coefficients 0..N
  double radius = 0;  // fitted convergence radius in z
  double delta_h = 0; // trusted half-width
  RadiusFit fitR, fitW;
};

// Extends (R, W) from the first-order data up to order N_max.
void taylor_expand(SonicWindow& win, int N_max, const ModelParams& P);

SonicWindow sonic_window(double xstar, const ModelParams& P, int N_max = 40);

// (D, W) and optionally (dD/dx, dW/dx); throws OutOfRadius beyond the
// trusted window (a relative slack of 1e-9 is allowed).
std::array<double, 2> eval_expansion(const SonicWindow& win, double x);
std::array<double, 2> eval_expansion_deriv(const SonicWindow& win, double x);

// Regular expansion about the center, W(0) = 1/3, even orders only.
struct OriginExpansion {
  double R0 = 0;  // central value of D (free parameter)
  Series R, W;    // coefficients in x, 0..N
  std::array<double, 2> eval(double x) const;
  std::array<double, 2> eval_deriv(double x) const;
};

OriginExpansion origin_expand(double R0, const ModelParams& P, int N_max = 40);

}  // namespace rlp
