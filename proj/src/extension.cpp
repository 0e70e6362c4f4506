#include "rlp/extension.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rlp/fit.hpp"
#include "rlp/roots.hpp"

namespace rlp {
namespace {

Series shift1(const Series& a) {
  Series out(a.size() + 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i + 1] = a[i];
  return out;
}

Series series_deriv(const Series& a) {
  Series out(a.size() > 1 ? a.size() - 1 : 1, 0.0);
  for (std::size_t i = 1; i < a.size(); ++i) out[i - 1] = a[i] * static_cast<double>(i);
  return out;
}

double coeff(const Series& a, int k) {
  return (k >= 0 && k < static_cast<int>(a.size())) ? a[static_cast<std::size_t>(k)] : 0.0;
}

}  // namespace

std::array<double, 3> yzero_residual(const Series& d, const Series& w,
                                     const Series& chi, int k,
                                     const ModelParams& P) {
  const double eps = P.epsilon;
  const std::size_t keep = static_cast<std::size_t>(k);
  // G = d / Y^2 as a series (d has no constant or linear part)
  Series g(keep + 1, 0.0);
  for (std::size_t j = 0; j <= keep; ++j) g[j] = coeff(d, static_cast<int>(j) + 2);
  const Series T = shift1(shift1(series_pow(g, -P.eta, keep)));  // G^-eta Y^2

  Series wpe = w;
  if (wpe.empty()) wpe.resize(1, 0.0);
  wpe[0] += eps;
  Series wm1 = w;
  if (wm1.empty()) wm1.resize(1, 0.0);
  wm1[0] -= 1.0;
  Series dmw(std::max(d.size(), w.size()), 0.0);
  for (std::size_t i = 0; i < dmw.size(); ++i)
    dmw[i] = coeff(d, static_cast<int>(i)) - coeff(w, static_cast<int>(i));

  const Series chi2 = series_mul(chi, chi, keep);
  const Series wpe2 = series_mul(wpe, wpe, keep);
  Series brk = wpe2;  // (w+eps)^2 - eps (w-1)^2 + 4 eps w d
  series_axpy(brk, series_mul(wm1, wm1, keep), -eps);
  series_axpy(brk, series_mul(w, d, keep), 4 * eps);
  Series C = T;
  C.resize(keep + 1, 0.0);
  series_axpy(C, series_mul(chi2, brk, keep), -1.0);

  const Series dp = series_deriv(d), wp = series_deriv(w), cp = series_deriv(chi);
  // common cubic block chi^2 (w+eps)^2 (d-w)
  const Series blk = series_mul(series_mul(chi2, wpe2, keep), dmw, keep);

  Series Ed = shift1(series_mul(C, dp, keep));
  Ed.resize(keep + 1, 0.0);
  series_axpy(Ed, series_mul(blk, d, keep), -2.0);

  Series Ew = shift1(series_mul(C, wp, keep));
  for (double& v : Ew) v *= (1 - eps);
  Ew.resize(keep + 1, 0.0);
  Series om3w(w.size(), 0.0);  // 1 - 3w
  for (std::size_t i = 0; i < w.size(); ++i) om3w[i] = -3.0 * w[i];
  om3w[0] += 1.0;
  series_axpy(Ew, series_mul(C, series_mul(wpe, om3w, keep), keep), 1.0);
  series_axpy(Ew, series_mul(blk, w, keep), 2 * (1 + eps));

  Series Ec = shift1(cp);
  for (double& v : Ec) v *= (1 - eps);
  Ec.resize(keep + 1, 0.0);
  series_axpy(Ec, series_mul(wm1, chi, keep), 1.0);

  return {Ed[keep], Ew[keep], Ec[keep]};
}

std::array<double, 3> YZeroSeries::eval(double Y) const {
  return {series_eval(d, Y), series_eval(w, Y), series_eval(chi, Y)};
}

std::array<double, 3> YZeroSeries::eval_deriv(double Y) const {
  return {series_eval_deriv(d, Y), series_eval_deriv(w, Y), series_eval_deriv(chi, Y)};
}

YZeroSeries y_zero_series(double d2, double w1, const ModelParams& P, int N_max) {
  if (!(d2 > 1.0)) throw DomainError("y_zero_series: need d2 > 1");
  if (!(w1 < 0.0)) throw DomainError("y_zero_series: need w1 < 0");
  if (N_max < 8) throw ConfigError("y_zero_series: N_max too small");
  YZeroSeries out;
  out.d2 = d2;
  out.w1 = w1;
  const std::size_t n = static_cast<std::size_t>(N_max) + 1;
  out.d.assign(n, 0.0);
  out.w.assign(n, 0.0);
  out.chi.assign(n, 0.0);
  out.d[2] = d2;
  out.w[0] = 1.0;
  out.w[1] = w1;
  out.chi[0] = 1.0;

  // Each unknown enters its residual coefficient affinely; the leading
  // factors are -(1+eps)^2 (k-2), -(1-eps)(1+eps)^2 (k-1) and (1-eps) k,
  // so one evaluation with the slot zeroed recovers the coefficient.  The
  // factors vanish exactly at the free orders (d2 at k=2, w1 at k=1).
  const double opl = 1 + P.epsilon, oml = 1 - P.epsilon;
  auto solve_slot = [&](double& slot, int comp, int k) {
    const double fac = (comp == 0)   ? -opl * opl * (k - 2)
                       : (comp == 1) ? -oml * opl * opl * (k - 1)
                                     : oml * k;
    if (!(std::abs(fac) > P.tol_identity))
      throw RecursionSingular("y_zero_series: leading factor vanishes at order " +
                              std::to_string(k));
    slot = 0.0;
    const double s0 = yzero_residual(out.d, out.w, out.chi, k, P)[comp];
    slot = -s0 / fac;
  };

  solve_slot(out.chi[1], 2, 1);
  for (int N = 2; N <= N_max; ++N) {
    if (N > 2) solve_slot(out.d[static_cast<std::size_t>(N)], 0, N);
    solve_slot(out.w[static_cast<std::size_t>(N)], 1, N);
    solve_slot(out.chi[static_cast<std::size_t>(N)], 2, N);
  }

  const std::size_t last = static_cast<std::size_t>(N_max);
  const std::size_t first = last >= 19 ? last - 19 : 0;
  double radius = std::numeric_limits<double>::infinity();
  for (const Series* s : {&out.d, &out.w, &out.chi})
    radius = std::min(radius, fit_radius(*s, first, last).radius);
  if (!std::isfinite(radius) || radius <= 0)
    throw WindowCollapse("y_zero_series: no usable radius estimate");
  out.radius = radius;
  out.Y0 = std::min(0.9 * radius, 0.05);
  return out;
}

namespace {

Vec<3> rhs_neg_w(double Y, const Vec<3>& s, const ModelParams& P) {
  const auto r = rhs_exterior({Y, s[0], s[1], s[2]}, P);
  return {r[0], r[1], r[2]};
}

// reciprocal-velocity form: state (d, u, chi) with u = 1/w
Vec<3> rhs_neg_u(double Y, const Vec<3>& s, const ModelParams& P) {
  const double u = s[1];
  const auto r = rhs_exterior({Y, s[0], 1.0 / u, s[2]}, P);
  return {r[0], -u * u * r[1], r[2]};
}

double cfloor_scale(double Y, const Vec<3>& s, const ModelParams& P) {
  const double G = s[0] / (Y * Y);
  const double T = pow_guarded(G, -P.eta) * Y * Y;
  return 1.0 + std::abs(T) + s[2] * s[2];
}

}  // namespace

std::array<double, 3> Extension::state(double Y) const {
  const double tol = 1e-12 * (1 + std::abs(Y));
  if (std::abs(Y) <= series.Y0 + tol) return series.eval(Y);
  if (Y < 0) {
    if (Y >= Y_switch - tol) {
      const auto v = neg_a.eval(std::min(Y, neg_a.t_start));
      return {v[0], v[1], v[2]};
    }
    if (Y >= Y_stop - tol) {
      const auto v = neg_b.eval(std::max(Y, neg_b.t_end));
      return {v[0], 1.0 / v[1], v[2]};
    }
    throw DomainError("Extension::state: Y below the computed range");
  }
  if (Y <= pos.t_end + tol) {
    const auto v = pos.eval(std::min(Y, pos.t_end));
    return {v[0], v[1], v[2]};
  }
  throw DomainError("Extension::state: Y beyond the sonic stop");
}

double Extension::C_of(double Y, const ModelParams& P) const {
  const auto s = state(Y);
  const double eps = P.epsilon;
  const double G = (Y == 0) ? series.d2 : s[0] / (Y * Y);
  const double T = pow_guarded(G, -P.eta) * Y * Y;
  const double w = s[1], d = s[0], chi = s[2];
  return T - chi * chi * ((w + eps) * (w + eps) - eps * (w - 1) * (w - 1) + 4 * eps * w * d);
}

void fit_ms_asymptotics(Extension& ext, const ModelParams& P,
                        const ExtensionConfig& cfg) {
  const Trajectory<3>& tb = ext.neg_b;
  if (tb.steps.empty()) throw FitFailure("fit_ms_asymptotics: no blow-up piece");
  const double Y_end = tb.t_end;
  const double u_end = tb.y_end[1];

  // u = 1/w is monotone along the piece; locate the marker crossings
  auto locate_u = [&](double level) {
    auto g = [&](double Y) { return tb.eval(Y)[1] - level; };
    if (!(g(tb.t_start) > 0 && g(Y_end) < 0))
      throw FitFailure("fit_ms_asymptotics: marker level " + std::to_string(level) +
                       " not bracketed");
    return brent(g, Y_end, tb.t_start, 1e-15);
  };
  const double Y4 = locate_u(1e-4), Y5 = locate_u(1e-5);

  // three-point extrapolation of the u(Y) zero crossing
  ext.Y_ms = quad_root_3pt(Y4, 1e-4, Y5, 1e-5, Y_end, u_end);
  if (!(ext.Y_ms < Y_end))
    throw FitFailure("fit_ms_asymptotics: blow-up location not left of the data");

  const double dY_end = Y_end - ext.Y_ms;
  ext.w_hat = dY_end / u_end;
  ext.d_hat = tb.y_end[0] * dY_end;
  ext.Q0 = tb.y_end[0] * u_end;

  // power-law fits over w in [1e3, w_cap]
  const double Y3 = locate_u(1e-3);
  const int n = std::max(cfg.n_fit, 8);
  const double lo = std::log(dY_end), hi = std::log(Y3 - ext.Y_ms);
  std::vector<double> ls, lchi, ld, lw, llam;
  for (int i = 0; i < n; ++i) {
    const double l = lo + (hi - lo) * i / (n - 1);
    const double Y = ext.Y_ms + std::exp(l);
    const auto v = tb.eval(std::min(std::max(Y, tb.t_end), tb.t_start));
    const double d = v[0], w = 1.0 / v[1], chi = v[2];
    ls.push_back(l);
    lchi.push_back(std::log(chi));
    ld.push_back(std::log(d));
    lw.push_back(std::log(w));
    llam.push_back(std::log(fields_Y({Y, d, w, chi}, P).e2lam));
  }
  const LineFit fc = fit_line(ls, lchi);
  ext.chi_exp = fc.slope;
  ext.chi_hat = std::exp(fc.intercept);
  ext.d_exp = fit_line(ls, ld).slope;
  ext.w_exp = fit_line(ls, lw).slope;
  ext.e2lam_exp = fit_line(ls, llam).slope;
}

Extension extend(const YZeroSeries& series, const ModelParams& P,
                 const ExtensionConfig& cfg) {
  Extension ext;
  ext.series = series;
  const double Y0 = series.Y0;
  OdeOptions opts;
  opts.rtol = cfg.rtol;
  opts.atol = cfg.atol;

  // left of the patch: plain variables until the velocity reaches w_switch
  {
    const auto s0 = series.eval(-Y0);
    std::vector<Event<3>> evs(1);
    evs[0] = {[&cfg](double, const Vec<3>& y) { return y[1] - cfg.w_switch; }, +1, true};
    auto f = [&P](double Y, const Vec<3>& y) { return rhs_neg_w(Y, y, P); };
    const auto res = integrate<3>(f, -Y0, Vec<3>{s0[0], s0[1], s0[2]}, cfg.Y_floor,
                                  opts, evs, &ext.neg_a);
    if (res.reason != OdeStop::Event)
      throw NoBlowUp("extend: velocity never reached the switch level");
    ext.Y_switch = res.t;

    // reciprocal velocity from here to the cap
    std::vector<Event<3>> evs_u(1);
    const double u_cap = 1.0 / cfg.w_cap;
    evs_u[0] = {[u_cap](double, const Vec<3>& y) { return y[1] - u_cap; }, -1, true};
    auto fu = [&P](double Y, const Vec<3>& y) { return rhs_neg_u(Y, y, P); };
    const auto res_u = integrate<3>(fu, res.t, Vec<3>{res.y[0], 1.0 / res.y[1], res.y[2]},
                                    cfg.Y_floor, opts, evs_u, &ext.neg_b);
    if (res_u.reason != OdeStop::Event)
      throw NoBlowUp("extend: velocity never reached the blow-up cap");
    ext.Y_stop = res_u.t;
  }

  // right of the patch: stop just short of the sonic line C = 0
  {
    const auto s0 = series.eval(Y0);
    std::vector<Event<3>> evs(1);
    evs[0] = {[&P](double Y, const Vec<3>& y) {
                const YState s{Y, y[0], y[1], y[2]};
                return exterior_C(s, P) + 1e-8 * cfloor_scale(Y, y, P);
              },
              +1, true};
    auto f = [&P](double Y, const Vec<3>& y) { return rhs_neg_w(Y, y, P); };
    const auto res = integrate<3>(f, Y0, Vec<3>{s0[0], s0[1], s0[2]}, cfg.Y_pos_end,
                                  opts, evs, &ext.pos);
    if (res.reason != OdeStop::Event)
      throw RootFailure("extend: no sonic stop on the right");
    // extrapolate the last stretch of C to its zero
    const double h = 1e-4 * (res.t - Y0);
    auto Cat = [&](double Y) {
      const auto v = ext.pos.eval(Y);
      return exterior_C({Y, v[0], v[1], v[2]}, P);
    };
    ext.Y_sp = quad_root_3pt(res.t - 2 * h, Cat(res.t - 2 * h), res.t - h,
                             Cat(res.t - h), res.t, Cat(res.t));
  }

  fit_ms_asymptotics(ext, P, cfg);
  return ext;
}

}  // namespace rlp
