#include "rlp/model.hpp"

#include <cmath>

#include "rlp/errors.hpp"

namespace rlp {

double pow_guarded(double D, double p) {
  if (!(D > 1e-300)) throw DomainError("density underflow in power");
  return std::pow(D, p);
}

SonicTerms sonic_terms(const XState& s, const ModelParams& P) {
  const double eps = P.epsilon, eta = P.eta;
  const double x = s.x, D = s.D, W = s.W;
  SonicTerms t;
  t.Dme = pow_guarded(D, -eta);
  t.Hbr = (W + eps) * (W + eps) - eps * (W - 1) * (W - 1) + 4 * eps * D * W;
  t.B = t.Dme - x * x * t.Hbr;
  const double A0 = eta * (1 + D) * x;
  t.J = -A0 + std::sqrt(A0 * A0 + eps * x * x + t.Dme / (1 - eps));
  t.H = t.J + 2 * A0;
  t.f = t.J - x * D;
  return t;
}

std::array<double, 2> rhs_radial(const XState& s, const ModelParams& P) {
  const double eps = P.epsilon;
  const SonicTerms t = sonic_terms(s, P);
  if (std::abs(t.B) <= P.tol_identity * (1 + t.Dme))
    throw SonicProximity("rhs_radial: sonic denominator vanishing");
  const double x = s.x, D = s.D, W = s.W;
  const double common = (W + eps) * (D - W) / t.B;
  return {-2 * x * (1 - eps) * D * common,
          (1 - 3 * W) / x + 2 * x * (1 + eps) * W * common};
}

std::array<double, 2> rhs_newtonian(const XState& s) {
  const double x = s.x, D = s.D, W = s.W;
  const double B = 1 - x * x * W * W;
  if (B == 0) throw SonicProximity("rhs_newtonian: sonic denominator vanishing");
  const double common = (D - W) / B;
  return {-2 * x * D * W * common, (1 - 3 * W) / x + 2 * x * W * W * common};
}

DampingTerms damping_terms(const XState& s, const ModelParams& P) {
  const double eps = P.epsilon, eta = P.eta;
  const double x = s.x, D = s.D, W = s.W;
  const SonicTerms t = sonic_terms(s, P);
  DampingTerms out;
  const double Dme1 = pow_guarded(D, -eta - 1);
  const double Jden = (1 - eps) * t.J + 2 * eps * x * (1 + D);
  out.Z = Jden * (t.H + x * W);
  out.a1 = ((2 * eps * x * t.J + (eps / (1 - eps)) * Dme1) / Jden + x) *
               (2 * (1 - eps) * D * (W + eps) / t.B) -
           2 * eps * (t.Dme / ((1 - eps) * x) + (1 - eps) * x + (D + eps) * t.f) / out.Z;
  out.a2 = 2 * eps *
           ((t.J - x * W) * (D - 1) + 2 * t.f + 4 * eps * x + x * D * (5 + eps)) /
           out.Z;
  out.b1 = D * (x * W - t.J) / (t.H + x * W) +
           eps * (x * W - t.J) *
               (x * (2 * D * D - 2 * D + 1 - eps) + 2 * t.Dme / ((1 - eps) * x)) /
               out.Z;
  out.b2 = -2 * x * x *
           (D * (D * D + (3 + eps) * D - (1 - eps)) +
            eps * (4 * D * D * D / (1 - eps) + 2 * (1 + eps) * D * (1 + D) / (1 - eps) +
                   (5 - eps) * D * D / (1 - eps) + 3 * D - 2 + eps)) /
           out.Z;
  return out;
}

double Jprime(const XState& s, const ModelParams& P) {
  const double eps = P.epsilon;
  const double x = s.x, D = s.D;
  const SonicTerms t = sonic_terms(s, P);
  const double Dp = rhs_radial(s, P)[0];
  const double Dme1 = pow_guarded(D, -P.eta - 1);
  const double num = -2 * eps * t.J * (1 + D) + eps * (1 - eps) * x -
                     (2 * eps * x * t.J + (eps / (1 - eps)) * Dme1) * Dp;
  const double den = (1 - eps) * t.J + 2 * eps * x * (1 + D);
  return num / den;
}

double fprime(const XState& s, const ModelParams& P) {
  const double Dp = rhs_radial(s, P)[0];
  return Jprime(s, P) - s.D - s.x * Dp;
}

std::array<double, 3> rhs_comoving(double y, double d, double w, double rt,
                                   const ModelParams& P) {
  const double eps = P.epsilon;
  const double Dme = pow_guarded(d, -P.eta);
  const double Bb = Dme - rt * rt * ((w + eps) * (w + eps) - eps * (w - 1) * (w - 1) +
                                     4 * eps * d * w);
  if (std::abs(Bb) <= P.tol_identity * (1 + Dme))
    throw SonicProximity("rhs_comoving: sonic denominator vanishing");
  const double slope = (w + eps) / (1 + eps);
  const double common = (w + eps) * (d - w) / Bb;
  return {-slope * (2 * (1 - eps) * rt * rt / y) * d * common,
          slope * ((1 - 3 * w) / y + (2 * (1 + eps) * rt * rt / y) * w * common),
          (rt / y) * slope};
}

double exterior_C(const YState& s, const ModelParams& P) {
  const double eps = P.epsilon, eta = P.eta;
  const double Y = s.Y, d = s.d, w = s.w, chi = s.chi;
  // (d Y^-2)^-eta Y^2, computed through G = d / Y^2 to stay finite near Y=0
  const double G = d / (Y * Y);
  const double T = pow_guarded(G, -eta) * Y * Y;
  return T - chi * chi *
                 ((w + eps) * (w + eps) - eps * (w - 1) * (w - 1) + 4 * eps * w * d);
}

std::array<double, 3> rhs_exterior(const YState& s, const ModelParams& P) {
  const double eps = P.epsilon;
  const double Y = s.Y, d = s.d, w = s.w, chi = s.chi;
  const double C = exterior_C(s, P);
  const double G = d / (Y * Y);
  const double T = pow_guarded(G, -P.eta) * Y * Y;
  if (std::abs(C) <= P.tol_identity * (1 + std::abs(T) + chi * chi))
    throw SonicProximity("rhs_exterior: sonic denominator vanishing");
  const double cc = chi * chi * (w + eps) * (w + eps) * (d - w) / C;
  return {(2 / Y) * d * cc,
          -(w + eps) * (1 - 3 * w) / ((1 - eps) * Y) -
              (2 * (1 + eps) / ((1 - eps) * Y)) * w * cc,
          (1 - w) * chi / ((1 - eps) * Y)};
}

FieldValues fields_x(const XState& s, double y, const ModelParams& P) {
  const double eps = P.epsilon, eta = P.eta;
  const double x = s.x, D = s.D, W = s.W;
  FieldValues out;
  out.Sigma = pow_guarded(D, 1 + eta);
  out.e2mu = pow_guarded(D, -eta) / ((1 + eps) * (1 + eps));
  const double Dpe = pow_guarded(D, eta);
  const double bracket =
      1 + eps * Dpe * x * x * (W - 1) * (W - 1) - 4 * eps * out.Sigma * W * x * x;
  if (!(bracket > 0))
    throw DomainError("fields_x: radial metric factor nonpositive");
  out.e2lam =
      x * x * (W + eps) * (W + eps) / ((1 + eps) * (1 + eps) * y * y * bracket);
  out.Lambda = std::sqrt(bracket);
  out.Vcal = std::sqrt(eps) * std::pow(D, eta / 2) * x * (W - 1);
  out.two_m_over_r = 4 * eps * out.Sigma * W * x * x;
  out.mtilde = 2 * eps * out.Sigma * W * x * x * x;
  out.ricci_factor = 1 - 3 * eps;
  out.gtilde = 6 * out.Sigma * W;
  return out;
}

double lambda_alpha(const XState& s, double y, const ModelParams& P) {
  const double eps = P.epsilon;
  const FieldValues fv = fields_x(s, y, P);
  return std::sqrt(fv.e2lam) * std::pow(fv.Sigma, 1.0 / (1 + eps)) *
         std::pow(std::abs(y), -2 * eps / (1 + eps)) * s.x * s.x;
}

ExteriorFields fields_Y(const YState& s, const ModelParams& P) {
  const double eps = P.epsilon, eta = P.eta;
  const double Y = s.Y, d = s.d, w = s.w, chi = s.chi;
  ExteriorFields out;
  const double G = d / (Y * Y);
  const double Gme = pow_guarded(G, -eta);  // (d Y^-2)^-eta
  out.e2mu = Gme / ((1 - eps) * (1 - eps));
  const double A = (1 + eps) * (1 + eps) / ((1 - eps) * (1 - eps));
  const double C = exterior_C(s, P);
  out.F = A * (C / (chi * chi * (w + eps) * (w + eps)) + 1.0);
  out.e2lam = out.e2mu * Y * Y / out.F;
  const double Gpe = pow_guarded(G, eta);
  const double lam2 = 1 + eps * chi * chi * Gpe *
                              ((w - 1) * (w - 1) - 4 * w * d) / (Y * Y);
  out.Lambda = (lam2 > 0) ? std::sqrt(lam2) : std::numeric_limits<double>::quiet_NaN();
  out.two_m_over_r = 4 * eps * chi * chi * pow_guarded(G, 1 + eta) * w;
  // Vcal^2 = eps chi^2 (w-1)^2 G^eta / Y^2; sign follows (w-1) * sign(y)
  const double v = std::sqrt(eps) * chi * std::abs(w - 1) * std::sqrt(Gpe) / std::abs(Y);
  out.Vcal = ((w - 1) * (Y > 0 ? 1.0 : -1.0) >= 0) ? v : -v;
  return out;
}

}  // namespace rlp
