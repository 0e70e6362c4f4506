#include "rlp/sonic_series.hpp"

#include <algorithm>
#include <cmath>

#include "rlp/errors.hpp"
#include "rlp/roots.hpp"

namespace rlp {
namespace {

// Quadratic factor appearing in the sonic-root condition, with D = W.
double sonic_H0(double W, double eps) {
  return (1 + 3 * eps) * W * W + 4 * eps * W + eps * eps - eps;
}

struct CubicData {
  std::array<double, 4> c{};  // c[0] + c[1] X + c[2] X^2 + c[3] X^3
  // pieces reused for the R1 back-substitution
  double d = 0, e = 0, cc = 0, b = 0, h = 0, H0 = 0;
};

CubicData slope_cubic(double W0, double eps) {
  const double eta = 2 * eps / (1 - eps);
  CubicData out;
  const double H0 = sonic_H0(W0, eps);
  const double d = (1 + eps) * W0 + 2 * eps;
  const double e =
      (3 + 5 * eps) * W0 * W0 - (1 - 8 * eps + eps * eps) * W0 - (3 * eps - eps * eps);
  const double c = 3 * W0 - 1;
  const double b = 0.5 * eta * (H0 / W0) + 2 * eps * W0;
  const double a = W0 * (W0 + eps);
  const double h = (1 + eps) * a + b * c;
  const double f = (1 - eps) * a - H0;
  const double g1 = d * h - b * e;
  const double g2 = f * d + (1 - eps) * a * b;
  const double g3 = f * e + (1 - eps) * a * h;
  out.c[3] = d * g1 - b * g2;
  out.c[2] = -(b * c * d * H0 - e * g1 + h * g2 + b * g3);
  out.c[1] = -(b * c * e * H0 - c * H0 * g1 + b * c * f * H0 + h * g3);
  out.c[0] = -c * H0 * (b * c * H0 + f * h);
  out.d = d;
  out.e = e;
  out.cc = c;
  out.b = b;
  out.h = h;
  out.H0 = H0;
  return out;
}

}  // namespace

SonicPoint solve_sonic_state(double xstar, const ModelParams& P) {
  if (!(xstar > 1) || !std::isfinite(xstar))
    throw DomainError("solve_sonic_state: xstar must exceed 1");
  const double eps = P.epsilon, eta = P.eta;
  const double target = 1.0 / (xstar * xstar);
  auto fdf = [&](double W) {
    const double We = std::pow(W, eta);
    const double H0 = sonic_H0(W, eps);
    const double f = H0 * We - target;
    double df = (2 * (1 + 3 * eps) * W + 4 * eps) * We;
    if (eta != 0) df += eta * H0 * We / W;
    return std::pair<double, double>{f, df};
  };
  SonicPoint sp;
  sp.xstar = xstar;
  sp.W0 = newton_safe(fdf, 1.0 / xstar, 1e-3, 2.0, 1e-15);
  const auto [res, slope] = fdf(sp.W0);
  (void)slope;
  if (!(std::abs(res) < 1e-12))
    throw RootFailure("solve_sonic_state: sonic condition residual too large");
  sp.B0 = std::pow(sp.W0, -eta) - xstar * xstar * sonic_H0(sp.W0, eps);
  return sp;
}

FirstOrder rlp_first_coeffs(const SonicPoint& sp, const ModelParams& P) {
  const double eps = P.epsilon;
  FirstOrder out;

  // Track the spurious slope from the pressureless limit, where the cubic
  // factors exactly and the branch sits at -W0.  Halving the gap each rung
  // keeps Newton inside its basin.
  double X = -1.0 / sp.xstar;
  CubicData cd;
  for (int k = 48; k >= 0; --k) {
    const double ek = eps * std::ldexp(1.0, -k);
    const ModelParams Pk = ModelParams::make(ek);
    const double W0k = solve_sonic_state(sp.xstar, Pk).W0;
    cd = slope_cubic(W0k, ek);
    auto fdf = [&](double x) {
      const double f = ((cd.c[3] * x + cd.c[2]) * x + cd.c[1]) * x + cd.c[0];
      const double df = (3 * cd.c[3] * x + 2 * cd.c[2]) * x + cd.c[1];
      return std::pair<double, double>{f, df};
    };
    X = newton_plain(fdf, X, 1e-15, 60);
  }
  out.W1_ghost = X;
  out.cubic = cd.c;

  const double q1 = cd.c[2] / cd.c[3] + X;
  const double q0 = -cd.c[0] / (cd.c[3] * X);
  out.disc_Q = q1 * q1 - 4 * q0;
  if (!(out.disc_Q >= 0))
    throw BranchUnreal("rlp_first_coeffs: deflated quadratic has no real root");
  out.W1 = 0.5 * (-q1 + std::sqrt(out.disc_Q));
  out.R1 = -(cd.d * out.W1 * out.W1 + cd.e * out.W1 + cd.cc * cd.H0) /
           (cd.h + cd.b * out.W1);
  return out;
}

std::array<double, 2> window_residual_coeff(const Series& R, const Series& W, int N,
                                            double xstar, const ModelParams& P) {
  const std::size_t keep = static_cast<std::size_t>(N);
  const double eps = P.epsilon;
  const double x2 = xstar * xstar;
  const std::size_t n = std::min(R.size(), W.size());
  Series Rp(n > 1 ? n - 1 : 1, 0.0), Wp(n > 1 ? n - 1 : 1, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    Rp[j] = (j + 1) * R[j + 1];
    Wp[j] = (j + 1) * W[j + 1];
  }
  Series WpE = W;
  WpE[0] += eps;
  Series RmW(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) RmW[j] = R[j] - W[j];

  const Series Dme = series_pow(R, -P.eta, keep);
  Series Hs = series_mul(W, W, keep);
  for (double& v : Hs) v *= (1 - eps);
  series_axpy(Hs, W, 4 * eps);
  series_axpy(Hs, series_mul(R, W, keep), 4 * eps);
  Hs[0] += eps * eps - eps;
  const Series x2fac = {x2, 2 * x2, x2};
  Series B = Dme;
  series_axpy(B, series_mul(x2fac, Hs, keep), -1.0);

  const Series onez = {1.0, 1.0};
  const Series P3 = series_mul(R, series_mul(WpE, RmW, keep), keep);
  Series T1 = series_mul(B, Rp, keep);
  series_axpy(T1, series_mul(onez, P3, keep), 2 * (1 - eps) * x2);

  Series brk = series_mul(onez, Wp, keep);
  brk[0] -= 1.0;
  series_axpy(brk, W, 3.0);
  const Series P3w = series_mul(W, series_mul(WpE, RmW, keep), keep);
  Series T2 = series_mul(B, brk, keep);
  series_axpy(T2, series_mul(x2fac, P3w, keep), -2 * (1 + eps));
  return {T1[keep], T2[keep]};
}

OrderSystem window_order_system(const Series& Rknown, const Series& Wknown, int N,
                                double xstar, const ModelParams& P) {
  if (N < 2) throw DomainError("window_order_system: order must be at least 2");
  Series R = Rknown, W = Wknown;
  R.resize(static_cast<std::size_t>(N) + 1, 0.0);
  W.resize(static_cast<std::size_t>(N) + 1, 0.0);
  auto ev = [&](double rn, double wn) {
    R[N] = rn;
    W[N] = wn;
    return window_residual_coeff(R, W, N, xstar, P);
  };
  const auto s00 = ev(0, 0);
  const auto s10 = ev(1, 0);
  const auto s01 = ev(0, 1);
  OrderSystem sys;
  sys.A[0][0] = s10[0] - s00[0];
  sys.A[0][1] = s01[0] - s00[0];
  sys.A[1][0] = s10[1] - s00[1];
  sys.A[1][1] = s01[1] - s00[1];
  sys.rhs = {-s00[0], -s00[1]};
  sys.det = sys.A[0][0] * sys.A[1][1] - sys.A[0][1] * sys.A[1][0];
  return sys;
}

void taylor_expand(SonicWindow& win, int N_max, const ModelParams& P) {
  win.R.assign({win.point.W0, win.first.R1});
  win.W.assign({win.point.W0, win.first.W1});
  for (int N = 2; N <= N_max; ++N) {
    const OrderSystem sys = window_order_system(win.R, win.W, N, win.xstar, P);
    if (std::abs(sys.det) <= P.tol_identity * N * N)
      throw MatrixSingular("taylor_expand: degenerate order system");
    const double rn = (sys.rhs[0] * sys.A[1][1] - sys.rhs[1] * sys.A[0][1]) / sys.det;
    const double wn = (sys.A[0][0] * sys.rhs[1] - sys.A[1][0] * sys.rhs[0]) / sys.det;
    win.R.push_back(rn);
    win.W.push_back(wn);
  }
}

SonicWindow sonic_window(double xstar, const ModelParams& P, int N_max) {
  if (N_max < 24) throw DomainError("sonic_window: need at least 24 orders");
  SonicWindow win;
  win.xstar = xstar;
  win.point = solve_sonic_state(xstar, P);
  win.first = rlp_first_coeffs(win.point, P);
  taylor_expand(win, N_max, P);
  const std::size_t last = static_cast<std::size_t>(N_max);
  const std::size_t first = last - 19;
  win.fitR = fit_radius(win.R, first, last);
  win.fitW = fit_radius(win.W, first, last);
  win.radius = std::min(win.fitR.radius, win.fitW.radius);
  win.delta_h = std::min(0.5 * win.radius, 0.05);
  if (!std::isfinite(win.radius) || win.delta_h < 1e-6)
    throw WindowCollapse("sonic_window: no usable trusted window");
  return win;
}

std::array<double, 2> eval_expansion(const SonicWindow& win, double x) {
  const double z = x / win.xstar - 1.0;
  if (std::abs(z) > win.delta_h * (1 + 1e-9))
    throw OutOfRadius("eval_expansion: point outside trusted window");
  return {series_eval(win.R, z), series_eval(win.W, z)};
}

std::array<double, 2> eval_expansion_deriv(const SonicWindow& win, double x) {
  const double z = x / win.xstar - 1.0;
  if (std::abs(z) > win.delta_h * (1 + 1e-9))
    throw OutOfRadius("eval_expansion_deriv: point outside trusted window");
  return {series_eval_deriv(win.R, z) / win.xstar,
          series_eval_deriv(win.W, z) / win.xstar};
}

std::array<double, 2> origin_residual_coeff(const Series& R, const Series& W, int n1,
                                            int n2, const ModelParams& P) {
  const std::size_t keep = static_cast<std::size_t>(std::max(n1, n2));
  const double eps = P.epsilon;
  const std::size_t n = std::min(R.size(), W.size());
  Series Rp(n > 1 ? n - 1 : 1, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) Rp[j] = (j + 1) * R[j + 1];
  Series zWp(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) zWp[j] = static_cast<double>(j) * W[j];
  Series WpE = W;
  WpE[0] += eps;
  Series RmW(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) RmW[j] = R[j] - W[j];

  const Series Dme = series_pow(R, -P.eta, keep);
  Series Hs = series_mul(W, W, keep);
  for (double& v : Hs) v *= (1 - eps);
  series_axpy(Hs, W, 4 * eps);
  series_axpy(Hs, series_mul(R, W, keep), 4 * eps);
  Hs[0] += eps * eps - eps;
  Series B = Dme;
  for (std::size_t j = 2; j <= keep; ++j) B[j] -= Hs[j - 2];

  const Series P3 = series_mul(R, series_mul(WpE, RmW, keep), keep);
  Series T1 = series_mul(B, Rp, keep);
  for (std::size_t j = keep; j >= 1; --j) T1[j] += 2 * (1 - eps) * P3[j - 1];

  Series brk = zWp;
  series_axpy(brk, W, 3.0);
  brk[0] -= 1.0;
  const Series P3w = series_mul(W, series_mul(WpE, RmW, keep), keep);
  Series T2 = series_mul(B, brk, keep);
  for (std::size_t j = keep; j >= 2; --j) T2[j] -= 2 * (1 + eps) * P3w[j - 2];
  return {T1[static_cast<std::size_t>(n1)], T2[static_cast<std::size_t>(n2)]};
}

OriginExpansion origin_expand(double R0, const ModelParams& P, int N_max) {
  if (!(R0 > 0) || !std::isfinite(R0))
    throw DomainError("origin_expand: central density value must be positive");
  if (N_max < 4) throw DomainError("origin_expand: need at least 4 orders");
  OriginExpansion oe;
  oe.R0 = R0;
  Series R(static_cast<std::size_t>(N_max) + 1, 0.0);
  Series W(static_cast<std::size_t>(N_max) + 1, 0.0);
  R[0] = R0;
  W[0] = 1.0 / 3.0;
  for (int N = 1; N + 1 <= N_max; ++N) {
    auto solve1 = [&](double& slot, int comp, int n1, int n2) {
      slot = 0;
      const auto s0 = origin_residual_coeff(R, W, n1, n2, P);
      slot = 1;
      const auto s1 = origin_residual_coeff(R, W, n1, n2, P);
      const double k = s1[comp] - s0[comp];
      if (!(std::abs(k) > P.tol_identity))
        throw MatrixSingular("origin_expand: vanishing recursion factor");
      slot = -s0[comp] / k;
    };
    solve1(R[N + 1], 0, N, N + 1);
    solve1(W[N + 1], 1, N, N + 1);
  }
  oe.R = std::move(R);
  oe.W = std::move(W);
  return oe;
}

std::array<double, 2> OriginExpansion::eval(double x) const {
  return {series_eval(R, x), series_eval(W, x)};
}

std::array<double, 2> OriginExpansion::eval_deriv(double x) const {
  return {series_eval_deriv(R, x), series_eval_deriv(W, x)};
}

}  // namespace rlp
