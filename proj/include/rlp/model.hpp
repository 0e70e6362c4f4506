#pragma once
#include <array>

#include "rlp/params.hpp"

namespace rlp {

// State on the self-similar radial chart: x is the similarity radius,
// D the density variable, W the velocity variable.
struct XState {
  double x = 0, D = 0, W = 0;
};

// State on the exterior chart Y = y^{-1/(1+eta)} used to continue the flow
// across y = +-infinity; chi = x / y.
struct YState {
  double Y = 0, d = 0, w = 0, chi = 0;
};

// D^p with the documented density floor.
double pow_guarded(double D, double p);

// Sonic-denominator algebra at one state.
struct SonicTerms {
  double Dme = 0;  // D^-eta
  double Hbr = 0;  // (W+eps)^2 - eps(W-1)^2 + 4 eps D W
  double B = 0;    // Dme - x^2 Hbr
  double J = 0;    // positive branch: B = (1-eps)(J - xW)(H + xW)
  double H = 0;    // J + 2 eta (1+D) x
  double f = 0;    // J - x D
};
SonicTerms sonic_terms(const XState& s, const ModelParams& P);

// dD/dx, dW/dx; throws SonicProximity when |B| <= tol_identity * (1 + D^-eta).
std::array<double, 2> rhs_radial(const XState& s, const ModelParams& P);

// eps = 0 limit system (used for continuity checks against rhs_radial).
std::array<double, 2> rhs_newtonian(const XState& s);

// Coefficients of the damped transport equation f' + (a1+a2) f = b1 + eps b2
// satisfied by f = J - xD along solutions.
struct DampingTerms {
  double a1 = 0, a2 = 0, b1 = 0, b2 = 0, Z = 0;
  double a() const { return a1 + a2; }
};
DampingTerms damping_terms(const XState& s, const ModelParams& P);

// d/dx of J and of f = J - xD along the flow (analytic forms).
double Jprime(const XState& s, const ModelParams& P);
double fprime(const XState& s, const ModelParams& P);

// Comoving chart: state (d, w, rt) as functions of y; returns derivatives.
std::array<double, 3> rhs_comoving(double y, double d, double w, double rt,
                                   const ModelParams& P);

// Exterior chart: the sonic denominator C and the flow (d, w, chi)'(Y).
double exterior_C(const YState& s, const ModelParams& P);
std::array<double, 3> rhs_exterior(const YState& s, const ModelParams& P);

// Metric and curvature scalars on the radial chart; y is the comoving
// similarity coordinate at the same point (x = chi * y).
struct FieldValues {
  double Sigma = 0;        // D^(1+eta); density: rho = eps Sigma / (2 pi (sqrt(eps) tau)^2)
  double e2mu = 0;         // lapse squared
  double e2lam = 0;        // radial metric squared (fluid-region closed form)
  double Lambda = 0;       // orthonormal radial derivative of the area radius
  double Vcal = 0;         // orthonormal time derivative of the area radius
  double two_m_over_r = 0; // = 4 eps Sigma W x^2
  double mtilde = 0;       // similarity Hawking mass = 2 eps Sigma W x^3
  double ricci_factor = 0; // scalar curvature / density = 1 - 3 eps
  double gtilde = 0;       // metric-trace combination 6 Sigma W
};
FieldValues fields_x(const XState& s, double y, const ModelParams& P);

// The constant alpha in the integrated radial-metric identity
// Sigma^{1/(1+eps)} y^{-2 eps/(1+eps)} x^2 e^lam = alpha; constancy along
// solutions is an invariant check.
double lambda_alpha(const XState& s, double y, const ModelParams& P);

// Exterior-chart metric data and the radial null potential
// F = Y^2 exp(2 mu_t - 2 lam_t).  F == (1+eps)^2/(1-eps)^2 exactly on C = 0.
struct ExteriorFields {
  double e2mu = 0, e2lam = 0;  // tilded (exterior-gauge) metric squares
  double F = 0;
  double Lambda = 0, Vcal = 0, two_m_over_r = 0;
};
ExteriorFields fields_Y(const YState& s, const ModelParams& P);

}  // namespace rlp
