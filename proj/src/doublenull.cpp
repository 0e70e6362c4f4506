#include "rlp/doublenull.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rlp/extension.hpp"
#include "rlp/ode.hpp"
#include "rlp/parallel.hpp"
#include "rlp/roots.hpp"
#include "rlp/series.hpp"

namespace rlp {

namespace {

constexpr double kPi = std::numbers::pi;

double sq(double x) { return x * x; }

// quintic smoothstep, C^2 at both ends
double smooth5(double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  return x * x * x * (10 + x * (-15 + 6 * x));
}

// cumulative Simpson on a uniformly spaced axis; out[0] = 0.
// Odd endpoints use the 5/12, 8/12, -1/12 start rule so every node gets
// fourth-order treatment without re-summing.
void cum_simpson(const double* F, std::size_t n, double dt, double* out) {
  out[0] = 0.0;
  if (n == 1) return;
  if (n == 2) {
    out[1] = 0.5 * dt * (F[0] + F[1]);
    return;
  }
  out[1] = dt * (5.0 * F[0] + 8.0 * F[1] - F[2]) / 12.0;
  for (std::size_t j = 2; j < n; ++j)
    out[j] = out[j - 2] + dt * (F[j - 2] + 4.0 * F[j - 1] + F[j]) / 3.0;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return (v.size() % 2) ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

// bilinear interpolation on the uniform (p, t) lattice with edge clamping
double bilerp(const Field2& F, double p0, double dp, std::size_t np, double dt,
              std::size_t nq, double pp, double tt) {
  double a = (pp - p0) / dp;
  double b = tt / dt;
  a = std::clamp(a, 0.0, double(np - 1));
  b = std::clamp(b, 0.0, double(nq - 1));
  std::size_t i = std::min(std::size_t(a), np - 2);
  std::size_t j = std::min(std::size_t(b), nq - 2);
  const double fa = a - double(i), fb = b - double(j);
  return (1 - fa) * ((1 - fb) * F.at(i, j) + fb * F.at(i, j + 1)) +
         fa * ((1 - fb) * F.at(i + 1, j) + fb * F.at(i + 1, j + 1));
}

struct NodeVals {
  double R, r, dpr, dqr, logOm;
  double rho, uq, up;
  double fp, fm;
  double two_m_r, m;
};

// All pointwise background quantities at a node, given the strip samples of
// the node itself (S), its ingoing anchor on Cbar (Sb) and its outgoing
// anchor on C (Sc).  hmbar / gbar / hpC are the shifted gauge potentials of
// the two anchors.
NodeVals node_fields(const DnChart& ch, const ModelParams& P, const StripPoint& S,
                     const StripPoint& Sb, double hmbar, double gbar,
                     const StripPoint& Sc, double hpC) {
  NodeVals nv;
  const double eps = P.epsilon, eta = P.eta;
  const double logR = std::log(ch.R0) + gbar + (ch.hp_tab(S.u) - ch.sh_p);
  const double R = std::exp(logR);
  nv.R = R;
  nv.r = S.chi * R;
  nv.dqr = R * S.xipxi * Sc.Pu / (S.Pu * 2.0 * ch.R0 * std::exp(hpC) * Sc.xipxi);
  nv.dpr = -R * S.xim * (Sb.Pu / S.Pu) * std::exp(Sb.u - S.u) /
           (2.0 * ch.R0 * std::exp(hmbar) * Sb.xim);
  const double Om2 = 4.0 * nv.dpr * nv.dqr / (S.two_m_r - 1.0);
  nv.logOm = 0.5 * std::log(Om2);
  nv.rho = eps * S.G1pe / (2.0 * kPi * R * R);
  nv.uq = (S.V + S.Lam) / (2.0 * nv.dqr);
  nv.up = (S.V - S.Lam) / (2.0 * nv.dpr);
  const double cP = std::pow(1.0 - eps, P.kplus) / (1.0 + eps);
  const double cM = (1.0 + eps) / std::pow(1.0 - eps, P.kminus);
  const double eP = (2.0 + 2.0 * eta) * P.kplus - 2.0;
  const double eM = 2.0 - (2.0 + 2.0 * eta) * P.kminus;
  nv.fp = cP * std::pow(nv.r, eP) * std::pow(nv.rho, P.kplus - 1.0) * sq(nv.uq);
  nv.fm = cM * std::pow(nv.r, eM) * std::pow(nv.rho, 1.0 - P.kminus) / sq(nv.uq);
  nv.two_m_r = S.two_m_r;
  nv.m = 0.5 * nv.r * S.two_m_r;
  return nv;
}

double log_Pi(double fp, double fm, const ModelParams& P) {
  return (std::log(fp) + std::log(fm)) / (P.kplus - P.kminus);
}

// mass-density integrand along q (per unit q, before the dq = q dt weight)
Field2 mass_integrand_field(const CharacteristicGrid& g, const ModelParams& P) {
  Field2 M(g.np, g.nq, 0.0);
  const double eta = P.eta;
  parallel_for(g.np * g.nq, [&](std::size_t k) {
    const std::size_t i = k / g.nq, j = k % g.nq;
    const double fp = g.fp.at(i, j), fm = g.fm.at(i, j);
    if (!(fp > 0.0) || !(fm > 0.0)) return;  // vacuum rows contribute nothing
    const double lr2 = std::log(g.r2.at(i, j));
    const double r = std::exp(0.5 * lr2);
    const double Pi = std::exp(log_Pi(fp, fm, P));
    const double ratio = std::exp(0.5 * (std::log(fm) - std::log(fp)));
    const double term1 = std::exp(-eta * lr2) * g.dqr2.at(i, j) / (2.0 * r);
    const double term2 =
        std::exp(-2.0 * g.logOm.at(i, j)) * ratio * g.sfrak.at(i, j) / (2.0 * r);
    M.at(i, j) = 2.0 * kPi * Pi * (term1 - term2);
  });
  return M;
}

}  // namespace

// ---------------------------------------------------------------------------
// chart backbone

double DnChart::u_of_Y(double Y) const { return -std::log((Y - Y1) / DY0); }

double DnChart::Y_of_u(double u) const { return Y1 + DY0 * std::exp(-u); }

double DnChart::rho_plus(double xi) const {
  if (xi > xi_sw) return xi / G_plus(Y1 + xi, *pr);
  return 1.0 / (a1 + 0.5 * a2 * xi + a3 * xi * xi / 6.0);
}

double DnChart::hp_tab(double u) const {
  return hTab.eval(std::clamp(u, u_lo, u_hi))[0];
}

double DnChart::hm_tab(double u) const {
  return hTab.eval(std::clamp(u, u_lo, u_hi))[1];
}

double DnChart::g_tab(double u) const {
  const auto h = hTab.eval(std::clamp(u, u_lo, u_hi));
  return h[1] - h[0];
}

StripPoint DnChart::strip(double u) const {
  StripPoint S;
  S.u = u;
  S.xi = DY0 * std::exp(-u);
  S.Y = Y1 + S.xi;
  const MetricPoint mp = metric_at_Y(S.Y, *pr);
  S.chi = std::sqrt(mp.chi2);
  S.dchi = mp.dchi2 / (2.0 * S.chi);
  S.w = mp.w;
  if (std::abs(S.Y) <= pr->ext->series.Y0) {
    S.G = series_eval(pr->Gser, S.Y);
    S.s1 = series_eval(pr->Wser, S.Y);
  } else {
    const auto st = pr->ext->state(S.Y);
    S.G = st[0] / (S.Y * S.Y);
    S.s1 = (st[1] - 1.0) / S.Y;
  }
  const double eta = P.eta;
  const double lG = std::log(S.G);
  S.G1pe = std::exp((1.0 + eta) * lG);
  S.Gm = G_minus(S.Y, *pr);
  S.rhop = rho_plus(S.xi);
  S.xipxi = S.dchi * S.xi - S.chi * S.rhop;
  S.xim = S.dchi + S.chi / S.Gm;
  S.Pu = S.rhop + S.xi / S.Gm;
  S.V = std::sqrt(P.epsilon) * S.chi * std::exp(0.5 * eta * lG) * S.s1;
  S.two_m_r = 4.0 * P.epsilon * mp.chi2 * S.G1pe * S.w;
  S.Lam = std::sqrt(1.0 + S.V * S.V - S.two_m_r);
  return S;
}

double DnChart::pbar_of(double u) const {
  const StripPoint S = strip(u);
  return -2.0 * (S.chi * R0 * std::exp(hm_tab(u) - sh_m) - r1);
}

double DnChart::u_on_cbar(double p) const {
  if (p >= 0.0 || p < -delta * (1.0 + 1e-12))
    throw ChartExhausted("u_on_cbar: p outside the slab");
  const double s = -std::log(-p / delta);
  if (s <= 0.0) return ubullet;
  if (s > s_end + 1e-9)
    throw ChartExhausted("u_on_cbar: p beyond tabulated ingoing segment");
  return bTraj.eval(std::min(s, s_end))[0];
}

std::array<double, 2> DnChart::u_on_c(double q) const {
  double t = std::log(q / q0);
  if (t > t_end + 1e-9)
    throw ChartExhausted("u_on_c: q beyond tabulated outgoing segment");
  t = std::clamp(t, 0.0, t_end);
  const auto y = cTraj.eval(t);
  return {y[0], y[1]};
}

double DnChart::node_u(double gamma, double lo, double hi, double guess) const {
  // g_tab is strictly decreasing; safeguarded Newton with a shrinking bracket
  double u = std::clamp(guess, lo, hi);
  double flo = g_tab(lo) - gamma;
  if (flo < 0.0) return lo;  // node sits on the bracket edge to roundoff
  for (int it = 0; it < 80; ++it) {
    const double f = g_tab(u) - gamma;
    if (std::abs(f) < 1e-13) return u;
    if (f > 0.0)
      lo = u;
    else
      hi = u;
    const StripPoint S = strip(u);
    double un = u + f / S.Pu;  // dg/du = -Pu
    if (!(un > lo && un < hi)) un = 0.5 * (lo + hi);
    if (std::abs(un - u) < 1e-14 * (1.0 + std::abs(u))) return un;
    u = un;
  }
  return u;
}

// ---------------------------------------------------------------------------
// boundary data evaluation

BgPoint CharacteristicData::background_at(double pp, double qq) const {
  if (!chart.pr) throw DomainError("background_at: data has no chart backbone");
  const DnChart& ch = chart;
  const bool on_c = std::abs(pp - p0) <= 1e-13 * delta;
  const bool on_cbar = std::abs(qq - q0) <= 1e-13 * q0;

  double ubar, hmbar, gbar;
  StripPoint Sb;
  if (on_c) {
    ubar = ch.ubullet;
    Sb = corner;
    hmbar = 0.0;
    gbar = 0.0;
  } else {
    ubar = ch.u_on_cbar(pp);
    Sb = ch.strip(ubar);
    hmbar = ch.hm_tab(ubar) - ch.sh_m;
    gbar = ch.g_tab(ubar) - ch.g_tab(ch.ubullet);
  }

  double uC, hpC;
  StripPoint Sc;
  if (on_cbar) {
    uC = ch.ubullet;
    hpC = 0.0;
    Sc = corner;
  } else {
    const auto uc = ch.u_on_c(qq);
    uC = uc[0];
    hpC = uc[1];
    Sc = ch.strip(uC);
  }

  double u;
  if (on_cbar)
    u = ubar;
  else if (on_c)
    u = uC;
  else {
    const double gamma = (ch.g_tab(ubar) - ch.g_tab(ch.ubullet)) + ch.g_tab(uC);
    u = ch.node_u(gamma, std::max(ubar, uC) - 1e-12, ch.u_hi, ubar + uC - ch.ubullet);
  }
  StripPoint S;
  if (on_cbar)
    S = Sb;  // the node sits on Cbar (u = ubar); corner if also on C
  else if (on_c)
    S = Sc;
  else
    S = ch.strip(u);

  const NodeVals nv = node_fields(ch, P, S, Sb, hmbar, gbar, Sc, hpC);
  BgPoint b;
  b.Y = S.Y;
  b.R = nv.R;
  b.r = nv.r;
  b.dpr = nv.dpr;
  b.dqr = nv.dqr;
  b.logOm = nv.logOm;
  b.rho = nv.rho;
  b.uq = nv.uq;
  b.up = nv.up;
  b.fp = nv.fp;
  b.fm = nv.fm;
  b.two_m_r = nv.two_m_r;
  b.m = nv.m;
  return b;
}

std::array<double, 2> CharacteristicData::fhat_C(double qq) const {
  if (vacuum) return {0.0, 0.0};
  if (!taper || qq <= q_taper_lo) {
    const BgPoint b = background_at(p0, qq);
    return {b.fp, b.fm};
  }
  const double v = std::log(qq);
  const double v1 = std::log(q_taper_lo), v2 = std::log(q_taper_hi);
  const double x = (v - v1) / (v2 - v1);
  const double lp_pow = lf1p - Nplus * (v - v1);
  const double lm_pow = lf1m - Nminus * (v - v1);
  if (qq >= q_taper_hi) return {std::exp(lp_pow), std::exp(lm_pow)};
  const double s = smooth5(x);
  const BgPoint b = background_at(p0, qq);
  const double lp = (1.0 - s) * std::log(b.fp) + s * lp_pow;
  const double lm = (1.0 - s) * std::log(b.fm) + s * lm_pow;
  return {std::exp(lp), std::exp(lm)};
}

std::array<double, 2> CharacteristicData::fhat_Cbar(double pp) const {
  if (vacuum) return {0.0, 0.0};
  const BgPoint b = background_at(pp, q0);
  return {b.fp, b.fm};
}

// ---------------------------------------------------------------------------
// data construction

CharacteristicData build_characteristic_data(const CausalProfile& pr,
                                             const CausalSkeleton& sk,
                                             const DnConfig& cfg) {
  const ModelParams& P = pr.P;
  if (cfg.delta <= 0 || cfg.q0 <= 0)
    throw ConfigError("build_characteristic_data: delta and q0 must be positive");
  if (cfg.delta / cfg.q0 > cfg.cap_delta_ratio + 1e-12)
    throw ConfigError("build_characteristic_data: delta/q0 exceeds the shallow-slab cap");
  if (sk.n_roots < 1 || !(sk.roots[0] < 0.0) || !(sk.Y_N > 0.0))
    throw GaugeError("build_characteristic_data: ray skeleton lacks a horizon/cone pair");

  CharacteristicData dat;
  dat.P = P;
  dat.q0 = cfg.q0;
  dat.delta = cfg.delta;
  dat.p0 = -cfg.delta;
  dat.A0 = cfg.A0 > 0 ? cfg.A0 : cfg.q0;
  dat.taper = cfg.taper;
  dat.theta = cfg.theta;

  DnChart& ch = dat.chart;
  ch.P = P;
  ch.pr = &pr;
  ch.Y1 = sk.roots[0];
  ch.YN = sk.Y_N;
  ch.DY0 = ch.YN - ch.Y1;
  ch.delta = cfg.delta;
  ch.q0 = cfg.q0;

  // jet of G_plus at Y1 (Richardson-extrapolated central differences) for the
  // regular ratio xi/G_plus near the inner edge
  {
    const double h = 3e-3 * ch.DY0;
    auto gp = [&](double Y) { return G_plus(Y, pr); };
    auto d1 = [&](double s) { return (gp(ch.Y1 + s) - gp(ch.Y1 - s)) / (2 * s); };
    auto d2 = [&](double s) {
      return (gp(ch.Y1 + s) - 2 * gp(ch.Y1) + gp(ch.Y1 - s)) / (s * s);
    };
    auto d3 = [&](double s) {
      return (gp(ch.Y1 + 2 * s) - 2 * gp(ch.Y1 + s) + 2 * gp(ch.Y1 - s) -
              gp(ch.Y1 - 2 * s)) /
             (2 * s * s * s);
    };
    ch.a1 = (4 * d1(h / 2) - d1(h)) / 3;
    ch.a2 = (4 * d2(h / 2) - d2(h)) / 3;
    ch.a3 = (4 * d3(h / 2) - d3(h)) / 3;
    if (!(ch.a1 > 0))
      throw GaugeError("build_characteristic_data: degenerate horizon slope");
    ch.xi_sw = 1e-5 * ch.DY0;
  }

  // gauge potential tables h+-(u) on the strip, u = -log((Y-Y1)/DY0)
  ch.u_lo = 0.02;
  ch.u_hi = cfg.u_deep;
  OdeOptions topts;
  topts.rtol = cfg.rtol;
  topts.atol = cfg.atol;
  auto hrhs = [&](double u, const Vec<2>& /*y*/) -> Vec<2> {
    const double xi = ch.DY0 * std::exp(-u);
    const double Y = ch.Y1 + xi;
    return {ch.rho_plus(xi), -xi / G_minus(Y, pr)};
  };
  integrate<2>(hrhs, ch.u_lo, {0.0, 0.0}, ch.u_hi, topts, {}, &ch.hTab);

  // h+ from the table anchor down to the cone root (G_plus is regular there)
  {
    auto rhs = [&](double Y, const Vec<1>& /*y*/) -> Vec<1> {
      return {-1.0 / G_plus(Y, pr)};
    };
    Trajectory<1> tr;
    const auto end = integrate<1>(rhs, ch.Y_of_u(ch.u_lo), {0.0}, ch.YN, topts, {}, &tr);
    ch.hpN = end[0];
  }

  // corner placement: the ratio of slab depth to cone offset is monotone in
  // the corner position, so bracket and bisect on its log
  const double chi1 = std::sqrt(metric_at_Y(ch.Y1, pr).chi2);
  const double chiN = std::sqrt(metric_at_Y(ch.YN, pr).chi2);
  auto lratio = [&](double u) {
    const StripPoint S = ch.strip(u);
    const double dp = S.chi - chi1 * std::exp(ch.hm_tab(ch.u_hi) - ch.hm_tab(u));
    const double qp = S.chi - chiN * std::exp(ch.hpN - ch.hp_tab(u));
    if (!(dp > 0) || !(qp > 0))
      throw GaugeError("build_characteristic_data: corner ratio left its monotone window");
    return std::log(dp / qp) - std::log(cfg.delta / cfg.q0);
  };
  {
    double ua = ch.u_lo + 0.05, ub = ch.u_hi - 2.0;
    double fa = lratio(ua), fb = lratio(ub);
    if (!(fa > 0) || !(fb < 0))
      throw GaugeError("build_characteristic_data: corner ratio does not bracket the target");
    ch.ubullet = brent(lratio, ua, ub, 1e-13 * (1.0 + ub));
  }
  ch.Ybullet = ch.Y_of_u(ch.ubullet);
  ch.sh_p = ch.hp_tab(ch.ubullet);
  ch.sh_m = ch.hm_tab(ch.ubullet);
  {
    const StripPoint S = ch.strip(ch.ubullet);
    const double qp = S.chi - chiN * std::exp(ch.hpN - ch.sh_p);
    ch.R0 = cfg.q0 / (2.0 * qp);
    ch.r1 = chi1 * ch.R0 * std::exp(ch.hm_tab(ch.u_hi) - ch.sh_m);
    ch.rstar = chiN * ch.R0 * std::exp(ch.hpN - ch.sh_p);
  }
  dat.corner = ch.strip(ch.ubullet);

  // outgoing label table: u and h+ as functions of t = log(q/q0) along C
  ch.t_end = std::log(10.0) * cfg.q_decades + std::log(4.0);
  auto crhs = [&](double t, const Vec<2>& y) -> Vec<2> {
    const double q = cfg.q0 * std::exp(t);
    const StripPoint S = ch.strip(y[0]);
    const double dudt = q / (2.0 * ch.R0 * std::exp(y[1]) * (-S.xipxi));
    return {dudt, S.rhop * dudt};
  };
  integrate<2>(crhs, 0.0, {ch.ubullet, 0.0}, ch.t_end, topts, {}, &ch.cTraj);

  // ingoing label table: u against s = -log(p/p0) along Cbar.  The apparent
  // p -> 0 singularity cancels since rbar - r1 ~ xi there.
  ch.s_end = std::log(double(cfg.n_p)) + 2.0;
  auto brhs = [&](double s, const Vec<1>& y) -> Vec<1> {
    (void)s;
    const StripPoint S = ch.strip(y[0]);
    const double eh = std::exp(ch.hm_tab(y[0]) - ch.sh_m);
    const double rbar = S.chi * ch.R0 * eh;
    return {(rbar - ch.r1) / (ch.R0 * eh * S.xi * S.xim)};
  };
  integrate<1>(brhs, 0.0, {ch.ubullet}, ch.s_end, topts, {}, &ch.bTraj);

  // mesh axes
  const int nq = int(std::lround(cfg.q_decades * cfg.pts_per_decade)) + 1;
  dat.p.resize(cfg.n_p);
  for (int i = 0; i < cfg.n_p; ++i) dat.p[i] = dat.p0 * double(cfg.n_p - i) / cfg.n_p;
  dat.t.resize(nq);
  dat.q.resize(nq);
  for (int j = 0; j < nq; ++j) {
    dat.t[j] = double(j) * std::log(10.0) / cfg.pts_per_decade;
    dat.q[j] = cfg.q0 * std::exp(dat.t[j]);
  }

  // taper exponents: the minus family needs enough decay for a finite mass
  // integral, the plus family is slaved so the transport speed stays bounded
  const double dk = P.kplus - P.kminus;
  dat.Nminus = 0.5 * dk + 2.0 * P.eta + cfg.margin;
  dat.Nplus = dat.Nminus - 4.0 * P.eta;
  dat.beta = 2.0 * P.eta + (dat.Nplus + dat.Nminus) / dk - 1.0;
  dat.q_taper_lo = cfg.q0 + dat.A0;
  dat.q_taper_hi = 10.0 * dat.q_taper_lo;

  // ingoing data row (Cbar, q = q0)
  dat.cbar.s = dat.p;
  const std::size_t np = dat.p.size();
  dat.cbar.fp.resize(np);
  dat.cbar.fm.resize(np);
  dat.cbar.logOm.resize(np);
  dat.cbar.r.resize(np);
  dat.cbar.dqlogOm.assign(np, 0.0);
  dat.cbar.dp_r2.resize(np);
  dat.cbar.m.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    const BgPoint b = dat.background_at(dat.p[i], cfg.q0);
    dat.cbar.fp[i] = b.fp;
    dat.cbar.fm[i] = b.fm;
    dat.cbar.logOm[i] = b.logOm;
    dat.cbar.r[i] = b.r;
    dat.cbar.dp_r2[i] = -b.r;
    dat.cbar.m[i] = b.m;
  }

  // outgoing data row (C, p = p0); taper applies here
  if (cfg.taper) {
    const BgPoint b1 = dat.background_at(dat.p0, dat.q_taper_lo);
    dat.lf1p = std::log(b1.fp);
    dat.lf1m = std::log(b1.fm);
  }
  const std::size_t nqz = dat.q.size();
  dat.cdat.s = dat.q;
  dat.cdat.fp.resize(nqz);
  dat.cdat.fm.resize(nqz);
  dat.cdat.logOm.resize(nqz);
  dat.cdat.r.resize(nqz);
  dat.cdat.dqlogOm.resize(nqz);
  dat.cdat.dp_r2.assign(nqz, 0.0);
  dat.cdat.m.resize(nqz);
  for (std::size_t j = 0; j < nqz; ++j) {
    const auto fh = dat.fhat_C(dat.q[j]);
    dat.cdat.fp[j] = fh[0];
    dat.cdat.fm[j] = fh[1];
    dat.cdat.r[j] = ch.rstar + 0.5 * dat.q[j];
    const double lPi = log_Pi(fh[0], fh[1], P);
    const double ratio = std::exp(0.5 * (std::log(fh[1]) - std::log(fh[0])));
    dat.cdat.dqlogOm[j] = 2.0 * kPi * std::exp(lPi) * ratio / (dat.q[j] + 2.0 * ch.rstar);
    dat.cdat.m[j] = dat.background_at(dat.p0, dat.q[j]).m;
  }
  // Omega on C re-integrated from its own constraint so the tapered row stays
  // an exact solution of the outgoing ray equation
  {
    std::vector<double> F(nqz), I(nqz);
    for (std::size_t j = 0; j < nqz; ++j) F[j] = dat.q[j] * dat.cdat.dqlogOm[j];
    const double dt = dat.t[1] - dat.t[0];
    cum_simpson(F.data(), nqz, dt, I.data());
    const double anchor = dat.background_at(dat.p0, cfg.q0).logOm;
    for (std::size_t j = 0; j < nqz; ++j) dat.cdat.logOm[j] = anchor + I[j];
  }
  return dat;
}

// ---------------------------------------------------------------------------
// grids

CharacteristicGrid make_grid_frame(const CharacteristicData& dat, const DnConfig& cfg) {
  (void)cfg;
  CharacteristicGrid g;
  g.np = dat.p.size();
  g.nq = dat.q.size();
  g.p = dat.p;
  g.q = dat.q;
  g.t = dat.t;
  g.fp = Field2(g.np, g.nq);
  g.fm = Field2(g.np, g.nq);
  g.r2 = Field2(g.np, g.nq);
  g.dqr2 = Field2(g.np, g.nq);
  g.logOm = Field2(g.np, g.nq);
  g.dqlogOm = Field2(g.np, g.nq);
  g.sfrak = Field2(g.np, g.nq);
  g.m = Field2(g.np, g.nq);
  return g;
}

CharacteristicGrid initial_grid(const CharacteristicData& dat, const DnConfig& cfg) {
  if (!dat.chart.pr) throw DomainError("initial_grid: data has no chart backbone");
  CharacteristicGrid g = make_grid_frame(dat, cfg);
  const DnChart& ch = dat.chart;
  const ModelParams& P = dat.P;
  const std::size_t np = g.np, nq = g.nq;

  std::vector<double> ubar(np), gbar(np), hmb(np);
  std::vector<StripPoint> Sb(np);
  const double gcorner = ch.g_tab(ch.ubullet);
  parallel_for(np, [&](std::size_t i) {
    ubar[i] = (i == 0) ? ch.ubullet : ch.u_on_cbar(g.p[i]);
    Sb[i] = (i == 0) ? dat.corner : ch.strip(ubar[i]);
    gbar[i] = ch.g_tab(ubar[i]) - gcorner;
    hmb[i] = ch.hm_tab(ubar[i]) - ch.sh_m;
  });
  std::vector<double> uC(nq), hpC(nq), gC(nq);
  std::vector<StripPoint> Sc(nq);
  parallel_for(nq, [&](std::size_t j) {
    if (j == 0) {
      uC[j] = ch.ubullet;
      hpC[j] = 0.0;
      Sc[j] = dat.corner;
    } else {
      const auto uc = ch.u_on_c(g.q[j]);
      uC[j] = uc[0];
      hpC[j] = uc[1];
      Sc[j] = ch.strip(uC[j]);
    }
    gC[j] = ch.g_tab(uC[j]) - gcorner;
  });

  Field2 rhs2(np, nq, 0.0);
  parallel_for(np, [&](std::size_t i) {
    double u = ubar[i];
    for (std::size_t j = 0; j < nq; ++j) {
      if (i == 0)
        u = uC[j];
      else if (j == 0)
        u = ubar[i];
      else {
        const double gamma = gbar[i] + gC[j] + gcorner;
        const double guess = (j > 0) ? u + (uC[j] - uC[j - 1]) : u;
        u = ch.node_u(gamma, std::max(ubar[i], uC[j]) - 1e-12, ch.u_hi, guess);
      }
      const StripPoint S = (i == 0) ? Sc[j] : (j == 0 ? Sb[i] : ch.strip(u));
      const NodeVals nv = node_fields(ch, P, S, Sb[i], hmb[i], gbar[i], Sc[j], hpC[j]);
      g.fp.at(i, j) = nv.fp;
      g.fm.at(i, j) = nv.fm;
      g.r2.at(i, j) = nv.r * nv.r;
      g.dqr2.at(i, j) = 2.0 * nv.r * nv.dqr;
      g.logOm.at(i, j) = nv.logOm;
      g.sfrak.at(i, j) = 2.0 * nv.r * nv.dpr;
      g.m.at(i, j) = nv.m;
      const double Om2 = std::exp(2.0 * nv.logOm);
      const double lr2 = 2.0 * std::log(nv.r);
      const double Pi = std::exp(log_Pi(nv.fp, nv.fm, P));
      rhs2.at(i, j) = Om2 * (0.5 * nv.m * std::exp(-1.5 * lr2) -
                             (1.0 + P.eta) * kPi * Pi * std::exp(-(1.0 + P.eta) * lr2));
    }
  });

  // dq log Omega seeded through the scheme's own p-quadrature so the anchor
  // row matches the (possibly tapered) data exactly
  parallel_for(nq, [&](std::size_t j) {
    double acc = dat.cdat.dqlogOm[j];
    g.dqlogOm.at(0, j) = acc;
    for (std::size_t i = 1; i < np; ++i) {
      acc += 0.5 * (g.p[i] - g.p[i - 1]) * (rhs2.at(i - 1, j) + rhs2.at(i, j));
      g.dqlogOm.at(i, j) = acc;
    }
  });

  // boundary rows carry the data (identical to the background unless tapered)
  for (std::size_t j = 0; j < nq; ++j) {
    g.fp.at(0, j) = dat.cdat.fp[j];
    g.fm.at(0, j) = dat.cdat.fm[j];
    g.logOm.at(0, j) = dat.cdat.logOm[j];
    g.dqlogOm.at(0, j) = dat.cdat.dqlogOm[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// fluid closure

FluidPoint fluid_invert(double fp, double fm, double logOm, double r2,
                        const ModelParams& P) {
  FluidPoint F{};
  if (!(fp > 0.0) || !(fm > 0.0)) return F;  // vacuum
  const double eta = P.eta, eps = P.epsilon;
  const double lr2 = std::log(r2);
  const double Om2 = std::exp(2.0 * logOm);
  const double lPi = log_Pi(fp, fm, P);
  F.rho = std::exp(lPi - (1.0 + eta) * lr2) / (1.0 - eps);
  const double uq2 =
      (1.0 + eta) * std::exp(0.5 * (std::log(fp) - std::log(fm)) - eta * lr2);
  F.uq = std::sqrt(uq2);
  F.up = 1.0 / (Om2 * F.uq);
  F.Tpp = (1.0 + eps) * F.rho * F.up * F.up;
  F.Tqq = (1.0 + eps) * F.rho * uq2;
  F.Tpq = (1.0 - eps) * F.rho / Om2;
  F.Ucal = (1.0 + eta) * Om2 * uq2;
  return F;
}

double transport_speed(double fp, double fm, double logOm, double r2,
                       const ModelParams& P) {
  return fluid_invert(fp, fm, logOm, r2, P).Ucal;
}

TransportFields make_transport_fields(const CharacteristicGrid& g, const ModelParams& P) {
  TransportFields tf;
  tf.logU = Field2(g.np, g.nq);
  tf.qPhi = Field2(g.np, g.nq);
  parallel_for(g.np * g.nq, [&](std::size_t k) {
    const std::size_t i = k / g.nq, j = k % g.nq;
    const double U = transport_speed(g.fp.at(i, j), g.fm.at(i, j), g.logOm.at(i, j),
                                     g.r2.at(i, j), P);
    tf.logU.at(i, j) = std::log(U);  // NaN/zero propagate deliberately
    tf.qPhi.at(i, j) =
        g.q[j] * (2.0 * g.dqlogOm.at(i, j) - P.eta * g.dqr2.at(i, j) / g.r2.at(i, j)) * U;
  });
  return tf;
}

double interp_logU(const TransportFields& tf, const CharacteristicGrid& g, double p,
                   double q) {
  const double dp = g.p[1] - g.p[0];
  const double dt = g.t[1] - g.t[0];
  return bilerp(tf.logU, g.p[0], dp, g.np, dt, g.nq, p, std::log(q / g.q[0]));
}

// ---------------------------------------------------------------------------
// transport step

void euler_transport_step(const CharacteristicGrid& g, const CharacteristicData& dat,
                          CharacteristicGrid& out, TransportDiag* diag) {
  const ModelParams& P = dat.P;
  const std::size_t np = g.np, nq = g.nq;

  for (std::size_t j = 0; j < nq; ++j) {
    out.fp.at(0, j) = dat.cdat.fp[j];
    out.fm.at(0, j) = dat.cdat.fm[j];
  }
  for (std::size_t i = 0; i < np; ++i) {
    out.fp.at(i, 0) = dat.cbar.fp[i];
    out.fm.at(i, 0) = dat.cbar.fm[i];
  }
  if (dat.vacuum) {
    for (std::size_t i = 1; i < np; ++i)
      for (std::size_t j = 1; j < nq; ++j) {
        out.fp.at(i, j) = 0.0;
        out.fm.at(i, j) = 0.0;
      }
    return;
  }

  const TransportFields tf = make_transport_fields(g, P);
  const double dpax = g.p[1] - g.p[0];
  const double dtax = g.t[1] - g.t[0];
  const double q0 = dat.q0;

  if (diag) {
    diag->qexit_p = Field2(np, nq);
    diag->qexit_m = Field2(np, nq);
    diag->pexit_p = Field2(np, nq);
    diag->pexit_m = Field2(np, nq);
    diag->side_p = Field2(np, nq);
    diag->side_m = Field2(np, nq);
  }

  // one backward characteristic per family per node; RK4 across each p-cell
  parallel_for((np - 1) * (nq - 1), [&](std::size_t kk) {
    const std::size_t i = 1 + kk / (nq - 1);
    const std::size_t j = 1 + kk % (nq - 1);
    for (int fam = 0; fam < 2; ++fam) {
      const double kfam = fam == 0 ? P.kplus : P.kminus;
      auto rhs = [&](double pp, double qq, double& dq, double& dI) {
        const double tt = std::log(qq / q0);
        const double lU = bilerp(tf.logU, g.p[0], dpax, np, dtax, nq, pp, tt);
        const double qP = bilerp(tf.qPhi, g.p[0], dpax, np, dtax, nq, pp, tt);
        dq = kfam * std::exp(lU);
        dI = 2.0 * kfam * qP / qq;
      };
      auto rk4 = [&](double pp, double qq, double II, double h, double& qn,
                     double& In) {
        double k1q, k1I, k2q, k2I, k3q, k3I, k4q, k4I;
        rhs(pp, qq, k1q, k1I);
        rhs(pp + 0.5 * h, qq + 0.5 * h * k1q, k2q, k2I);
        rhs(pp + 0.5 * h, qq + 0.5 * h * k2q, k3q, k3I);
        rhs(pp + h, qq + h * k3q, k4q, k4I);
        qn = qq + h * (k1q + 2 * k2q + 2 * k3q + k4q) / 6.0;
        In = II + h * (k1I + 2 * k2I + 2 * k3I + k4I) / 6.0;
      };

      double qc = g.q[j], Ic = 0.0;
      double qstar = 0.0, pstar = 0.0;
      int side = 0;  // 0: exits on C (p = p0), 1: exits on Cbar (q = q0)
      bool exited = false;
      for (std::size_t cell = i; cell >= 1; --cell) {
        const double phi = g.p[cell], plo = g.p[cell - 1];
        double qn, In;
        rk4(phi, qc, Ic, plo - phi, qn, In);
        if (!std::isfinite(qn) || !std::isfinite(In))
          throw CharacteristicEscape("euler_transport_step: characteristic lost in cell");
        if (qn < q0) {
          // crossed the ingoing data curve inside this cell: solve for the
          // fractional step by secant on q(h) - q0
          double ha = 0.0, fa = qc - q0;
          double hb = plo - phi, fb = qn - q0;
          double hm = hb, qm = qn, Im = In;
          for (int it = 0; it < 60 && std::abs(fb) > 1e-13 * q0; ++it) {
            hm = hb - fb * (hb - ha) / (fb - fa);
            if (!std::isfinite(hm)) break;
            rk4(phi, qc, Ic, hm, qm, Im);
            ha = hb;
            fa = fb;
            hb = hm;
            fb = qm - q0;
          }
          pstar = phi + hm;
          qstar = q0;
          Ic = Im;
          side = 1;
          exited = true;
          break;
        }
        qc = qn;
        Ic = In;
      }
      if (!exited) {
        qstar = qc;
        pstar = g.p[0];
        side = 0;
        if (qstar > dat.q.back() * 4.0)
          throw CharacteristicEscape("euler_transport_step: characteristic left the slab");
      }
      const auto fh = side ? dat.fhat_Cbar(pstar) : dat.fhat_C(qstar);
      const double fhat = fam == 0 ? fh[0] : fh[1];
      const double val = fhat * std::exp(fam == 0 ? Ic : -Ic);
      if (!std::isfinite(val))
        throw CharacteristicEscape("euler_transport_step: non-finite transported value");
      if (fam == 0)
        out.fp.at(i, j) = val;
      else
        out.fm.at(i, j) = val;
      if (diag) {
        (fam == 0 ? diag->qexit_p : diag->qexit_m).at(i, j) = qstar;
        (fam == 0 ? diag->pexit_p : diag->pexit_m).at(i, j) = pstar;
        (fam == 0 ? diag->side_p : diag->side_m).at(i, j) = double(side);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// metric step

void metric_integration_step(const CharacteristicGrid& g, const CharacteristicData& dat,
                             CharacteristicGrid& out) {
  const ModelParams& P = dat.P;
  const double eta = P.eta;
  const std::size_t np = g.np, nq = g.nq;
  const double dtax = g.t[1] - g.t[0];

  Field2 rhs1(np, nq, 0.0), rhs2(np, nq, 0.0);
  parallel_for(np * nq, [&](std::size_t k) {
    const std::size_t i = k / nq, j = k % nq;
    const double Om2 = std::exp(2.0 * g.logOm.at(i, j));
    const double lr2 = std::log(g.r2.at(i, j));
    double Pi = 0.0;
    if (g.fp.at(i, j) > 0.0 && g.fm.at(i, j) > 0.0)
      Pi = std::exp(log_Pi(g.fp.at(i, j), g.fm.at(i, j), P));
    rhs1.at(i, j) = Om2 * (-0.5 + 2.0 * kPi * Pi * std::exp(-eta * lr2));
    rhs2.at(i, j) = Om2 * (0.5 * g.m.at(i, j) * std::exp(-1.5 * lr2) -
                           (1.0 + eta) * kPi * Pi * std::exp(-(1.0 + eta) * lr2));
  });

  // dq(r^2): trapezoid in p off the outgoing data curve (dq(r^2)|_C = r)
  parallel_for(nq, [&](std::size_t j) {
    double acc = dat.cdat.r[j];
    out.dqr2.at(0, j) = acc;
    for (std::size_t i = 1; i < np; ++i) {
      acc += 0.5 * (g.p[i] - g.p[i - 1]) * (rhs1.at(i - 1, j) + rhs1.at(i, j));
      out.dqr2.at(i, j) = acc;
    }
  });
  // r^2: Simpson in t off the ingoing data curve
  parallel_for(np, [&](std::size_t i) {
    std::vector<double> F(nq), I(nq);
    for (std::size_t j = 0; j < nq; ++j) F[j] = g.q[j] * out.dqr2.at(i, j);
    cum_simpson(F.data(), nq, dtax, I.data());
    const double anchor = dat.cbar.r[i] * dat.cbar.r[i];
    for (std::size_t j = 0; j < nq; ++j) out.r2.at(i, j) = anchor + I[j];
  });
  // dq log Omega: trapezoid in p; log Omega: Simpson in t
  parallel_for(nq, [&](std::size_t j) {
    double acc = dat.cdat.dqlogOm[j];
    out.dqlogOm.at(0, j) = acc;
    for (std::size_t i = 1; i < np; ++i) {
      acc += 0.5 * (g.p[i] - g.p[i - 1]) * (rhs2.at(i - 1, j) + rhs2.at(i, j));
      out.dqlogOm.at(i, j) = acc;
    }
  });
  parallel_for(np, [&](std::size_t i) {
    std::vector<double> F(nq), I(nq);
    for (std::size_t j = 0; j < nq; ++j) F[j] = g.q[j] * out.dqlogOm.at(i, j);
    cum_simpson(F.data(), nq, dtax, I.data());
    const double anchor = dat.cbar.logOm[i];
    for (std::size_t j = 0; j < nq; ++j) out.logOm.at(i, j) = anchor + I[j];
  });

  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nq; ++j) {
      if (!(out.r2.at(i, j) > 0.0) || !(out.dqr2.at(i, j) > 0.0) ||
          !std::isfinite(out.logOm.at(i, j)))
        throw PositivityLoss("metric_integration_step: radius or conformal factor degenerated");
    }

  // dp(r^2) and the Hawking mass, rebuilt from the freshly transported fluid
  Field2 rhs1n(np, nq, 0.0);
  parallel_for(np * nq, [&](std::size_t k) {
    const std::size_t i = k / nq, j = k % nq;
    const double Om2 = std::exp(2.0 * out.logOm.at(i, j));
    const double lr2 = std::log(out.r2.at(i, j));
    double Pi = 0.0;
    if (out.fp.at(i, j) > 0.0 && out.fm.at(i, j) > 0.0)
      Pi = std::exp(log_Pi(out.fp.at(i, j), out.fm.at(i, j), P));
    rhs1n.at(i, j) = Om2 * (-0.5 + 2.0 * kPi * Pi * std::exp(-eta * lr2));
  });
  parallel_for(np, [&](std::size_t i) {
    std::vector<double> F(nq), I(nq);
    for (std::size_t j = 0; j < nq; ++j) F[j] = g.q[j] * rhs1n.at(i, j);
    cum_simpson(F.data(), nq, dtax, I.data());
    const double anchor = dat.cbar.dp_r2[i];
    for (std::size_t j = 0; j < nq; ++j) out.sfrak.at(i, j) = anchor + I[j];
  });
  {
    const Field2 M = mass_integrand_field(out, P);
    parallel_for(np, [&](std::size_t i) {
      std::vector<double> F(nq), I(nq);
      for (std::size_t j = 0; j < nq; ++j) F[j] = g.q[j] * M.at(i, j);
      cum_simpson(F.data(), nq, dtax, I.data());
      const double anchor = dat.cbar.m[i];
      for (std::size_t j = 0; j < nq; ++j) out.m.at(i, j) = anchor + I[j];
    });
  }
}

// ---------------------------------------------------------------------------
// norms and residuals

double grid_distance(const CharacteristicGrid& a, const CharacteristicGrid& b,
                     double theta) {
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0, m5 = 0;
  for (std::size_t i = 0; i < a.np; ++i)
    for (std::size_t j = 0; j < a.nq; ++j) {
      const double q = a.q[j];
      auto dlog = [](double x, double y) {
        return (x > 0 && y > 0) ? std::abs(std::log(x / y)) : std::abs(x - y);
      };
      m1 = std::max(m1, dlog(a.fp.at(i, j), b.fp.at(i, j)));
      m1 = std::max(m1, dlog(a.fm.at(i, j), b.fm.at(i, j)));
      m2 = std::max(m2, std::abs(a.r2.at(i, j) - b.r2.at(i, j)) / (q * q));
      m3 = std::max(m3, std::abs(a.dqr2.at(i, j) - b.dqr2.at(i, j)) / q);
      m4 = std::max(m4, std::abs(a.logOm.at(i, j) - b.logOm.at(i, j)));
      m5 = std::max(m5, std::pow(q, 1.0 + theta) *
                            std::abs(a.dqlogOm.at(i, j) - b.dqlogOm.at(i, j)));
    }
  return m1 + m2 + m3 + m4 + m5;
}

namespace {

// sup of |q^j d^j_q x| over interior t-nodes, via log-axis stencils:
// q d_q = d_t, q^2 d^2_q = d^2_t - d_t, q^3 d^3_q = d^3_t - 3 d^2_t + 2 d_t
struct RowDer {
  double d1, d2, d3;
};
RowDer row_der(const std::vector<double>& x, std::size_t j, double dt) {
  RowDer d{};
  d.d1 = (x[j + 1] - x[j - 1]) / (2 * dt);
  d.d2 = (x[j + 1] - 2 * x[j] + x[j - 1]) / (dt * dt);
  if (j >= 2 && j + 2 < x.size())
    d.d3 = (-x[j - 2] + 2 * x[j - 1] - 2 * x[j + 1] + x[j + 2]) / (2 * dt * dt * dt);
  return d;
}

struct RowNorms {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
};
RowNorms row_norms(const std::vector<double>& x, double dt) {
  RowNorms n;
  for (std::size_t j = 0; j < x.size(); ++j) n.s0 = std::max(n.s0, std::abs(x[j]));
  for (std::size_t j = 1; j + 1 < x.size(); ++j) {
    const RowDer d = row_der(x, j, dt);
    n.s1 = std::max(n.s1, std::abs(d.d1));
    n.s2 = std::max(n.s2, std::abs(d.d2 - d.d1));
    if (j >= 2 && j + 2 < x.size())
      n.s3 = std::max(n.s3, std::abs(d.d3 - 3 * d.d2 + 2 * d.d1));
  }
  return n;
}

struct NormAccum {
  double fpart = 0, mpart = 0;
};

// weighted-sup pieces of the fluid and metric norms along one p = const row
NormAccum norms_on_row(const std::vector<double>& q, const std::vector<double>& lfp,
                       const std::vector<double>& lfm, const std::vector<double>& lOm,
                       const std::vector<double>& r2row,
                       const std::vector<double>& dqr2row, double Np, double Nm,
                       double theta, double dt) {
  const std::size_t nq = q.size();
  NormAccum A;
  // sup of |log(q^N f)| plus sups of the first two log-scaled derivatives of
  // the bare log f
  double w0p = 0, w0m = 0;
  for (std::size_t j = 0; j < nq; ++j) {
    w0p = std::max(w0p, std::abs(Np * std::log(q[j]) + lfp[j]));
    w0m = std::max(w0m, std::abs(Nm * std::log(q[j]) + lfm[j]));
  }
  const RowNorms np_ = row_norms(lfp, dt);
  const RowNorms nm_ = row_norms(lfm, dt);
  A.fpart = w0p + np_.s1 + np_.s2 + w0m + nm_.s1 + nm_.s2;

  const RowNorms nO = row_norms(lOm, dt);
  std::vector<double> qtheta(nq);
  double sOm = 0;
  for (std::size_t j = 1; j + 1 < nq; ++j) {
    const RowDer d = row_der(lOm, j, dt);
    const double w = std::pow(q[j], theta);
    sOm = std::max(sOm, w * std::abs(d.d1));
    sOm = std::max(sOm, w * std::abs(d.d2 - d.d1));
    if (j >= 2 && j + 2 < nq)
      sOm = std::max(sOm, w * std::abs(d.d3 - 3 * d.d2 + 2 * d.d1));
  }
  double sR = 0, sAux = 0;
  for (std::size_t j = 0; j < nq; ++j)
    sR = std::max(sR, std::abs(r2row[j]) / (q[j] * q[j]));
  for (std::size_t j = 1; j + 1 < nq; ++j) {
    const RowDer d = row_der(r2row, j, dt);
    const double qj = q[j];
    sR = std::max(sR, std::abs(d.d1) / (qj * qj));
    sR = std::max(sR, std::abs(d.d2 - d.d1) / (qj * qj));
    if (j >= 2 && j + 2 < nq)
      sR = std::max(sR, std::abs(d.d3 - 3 * d.d2 + 2 * d.d1) / (qj * qj));
  }
  for (std::size_t j = 0; j < nq; ++j) {
    sAux = std::max(sAux, q[j] * q[j] / r2row[j]);
    sAux = std::max(sAux, q[j] / dqr2row[j]);
  }
  A.mpart = nO.s0 + sOm + sR + sAux;
  return A;
}

}  // namespace

double triple_norm(const CharacteristicGrid& g, const CharacteristicData& dat) {
  const double dt = g.t[1] - g.t[0];
  double best = 0;
  for (std::size_t i = 0; i < g.np; ++i) {
    std::vector<double> lfp(g.nq), lfm(g.nq), lOm(g.nq), r2row(g.nq), dqrow(g.nq);
    for (std::size_t j = 0; j < g.nq; ++j) {
      lfp[j] = std::log(std::max(g.fp.at(i, j), 1e-300));
      lfm[j] = std::log(std::max(g.fm.at(i, j), 1e-300));
      lOm[j] = g.logOm.at(i, j);
      r2row[j] = g.r2.at(i, j);
      dqrow[j] = g.dqr2.at(i, j);
    }
    const NormAccum A = norms_on_row(g.q, lfp, lfm, lOm, r2row, dqrow, dat.Nplus,
                                     dat.Nminus, dat.theta, dt);
    best = std::max(best, A.fpart + A.mpart);
  }
  return best;
}

double data_norm(const CharacteristicData& dat) {
  const std::size_t nq = dat.q.size();
  const double dt = dat.t[1] - dat.t[0];
  std::vector<double> lfp(nq), lfm(nq), lOm(nq), r2row(nq), dqrow(nq);
  for (std::size_t j = 0; j < nq; ++j) {
    lfp[j] = std::log(std::max(dat.cdat.fp[j], 1e-300));
    lfm[j] = std::log(std::max(dat.cdat.fm[j], 1e-300));
    lOm[j] = dat.cdat.logOm[j];
    r2row[j] = dat.cdat.r[j] * dat.cdat.r[j];
    dqrow[j] = dat.cdat.r[j];  // dq(r^2) = r on the outgoing curve
  }
  const NormAccum A =
      norms_on_row(dat.q, lfp, lfm, lOm, r2row, dqrow, dat.Nplus, dat.Nminus, dat.theta, dt);
  double extra = 0;
  for (std::size_t i = 0; i < dat.p.size(); ++i) {
    extra = std::max(extra, std::abs(dat.cbar.dp_r2[i]) / dat.q0);
    extra = std::max(extra, std::abs(dat.cbar.m[i]));
  }
  return A.fpart + A.mpart + extra;
}

std::array<double, 2> constraint_residuals(const CharacteristicGrid& g,
                                           const ModelParams& P) {
  const std::size_t np = g.np, nq = g.nq;
  double rv = 0, ru = 0;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 1; j + 1 < nq; ++j) {
      auto X = [&](std::size_t jj) {
        return std::exp(-2.0 * g.logOm.at(i, jj)) * g.dqr2.at(i, jj) /
               (2.0 * std::sqrt(g.r2.at(i, jj)));
      };
      const double dqX = (X(j + 1) - X(j - 1)) / (g.q[j + 1] - g.q[j - 1]);
      const FluidPoint F = fluid_invert(g.fp.at(i, j), g.fm.at(i, j), g.logOm.at(i, j),
                                        g.r2.at(i, j), P);
      const double rhs = -kPi * std::sqrt(g.r2.at(i, j)) *
                         std::exp(2.0 * g.logOm.at(i, j)) * F.Tpp;
      const double den = std::abs(dqX) + std::abs(rhs) + 1e-12 * (1.0 + std::abs(X(j)) / g.q[j]);
      rv = std::max(rv, std::abs(dqX - rhs) / den);
    }
  for (std::size_t j = 0; j < nq; ++j)
    for (std::size_t i = 1; i + 1 < np; ++i) {
      auto Xp = [&](std::size_t ii) {
        return std::exp(-2.0 * g.logOm.at(ii, j)) * g.sfrak.at(ii, j) /
               (2.0 * std::sqrt(g.r2.at(ii, j)));
      };
      const double dpX = (Xp(i + 1) - Xp(i - 1)) / (g.p[i + 1] - g.p[i - 1]);
      const FluidPoint F = fluid_invert(g.fp.at(i, j), g.fm.at(i, j), g.logOm.at(i, j),
                                        g.r2.at(i, j), P);
      const double rhs = -kPi * std::sqrt(g.r2.at(i, j)) *
                         std::exp(2.0 * g.logOm.at(i, j)) * F.Tqq;
      const double den =
          std::abs(dpX) + std::abs(rhs) + 1e-12 * (1.0 + std::abs(Xp(i)) / g.q[j]);
      ru = std::max(ru, std::abs(dpX - rhs) / den);
    }
  return {rv, ru};
}

double tconstraint_residual(const CharacteristicGrid& g, const ModelParams& P) {
  double worst = 0;
  for (std::size_t i = 0; i < g.np; ++i)
    for (std::size_t j = 0; j < g.nq; ++j) {
      const FluidPoint F = fluid_invert(g.fp.at(i, j), g.fm.at(i, j), g.logOm.at(i, j),
                                        g.r2.at(i, j), P);
      if (F.rho == 0.0) continue;
      const double lhs = F.Tpp * F.Tqq;
      const double rhs = sq((1.0 + P.eta) * F.Tpq);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max({lhs, rhs, 1e-300}));
    }
  return worst;
}

// ---------------------------------------------------------------------------
// fixed point

FixedPointReport solve_fixed_point(CharacteristicGrid& g, const CharacteristicData& dat,
                                   const DnConfig& cfg) {
  if (dat.delta / dat.q0 > cfg.cap_delta_ratio + 1e-12)
    throw ConfigError("solve_fixed_point: delta/q0 exceeds the shallow-slab cap");
  FixedPointReport rep{};
  std::vector<double> hist;
  bool converged = false;
  int bad = 0;
  for (int n = 1; n <= cfg.max_iter; ++n) {
    CharacteristicGrid next = make_grid_frame(dat, cfg);
    euler_transport_step(g, dat, next);
    metric_integration_step(g, dat, next);
    const double a = grid_distance(next, g, dat.theta);
    next.iter = n;
    next.a_hist = hist;
    next.a_hist.push_back(a);
    g = std::move(next);
    hist.push_back(a);
    if (a <= cfg.tol_fp) {
      converged = true;
      break;
    }
    if (hist.size() >= 2) {
      if (hist[hist.size() - 1] >= hist[hist.size() - 2])
        ++bad;
      else
        bad = 0;
      if (bad >= 3)
        throw ContractionFailure("solve_fixed_point: three consecutive non-contracting sweeps");
    }
  }
  rep.n_iter = int(hist.size());
  rep.converged = converged;
  rep.a_hist = hist;
  std::vector<double> ratios;
  for (std::size_t k = 1; k < hist.size(); ++k)
    if (hist[k - 1] > 100.0 * cfg.tol_fp) ratios.push_back(hist[k] / hist[k - 1]);
  rep.contraction_ratio = ratios.empty()
                              ? (hist.size() >= 2 ? hist.back() / hist[hist.size() - 2] : 0.0)
                              : median_of(ratios);
  const auto res = constraint_residuals(g, dat.P);
  rep.resid_V1 = res[0];
  rep.resid_U1 = res[1];
  rep.tconstraint = tconstraint_residual(g, dat.P);
  if (rep.tconstraint > 1e-10)
    throw InvariantBreach("solve_fixed_point: fluid closure identity drifted");
  rep.norm_triple = triple_norm(g, dat);
  rep.norm_data = data_norm(dat);
  rep.norm_factor_A =
      std::max(4.0, 1.0 + 1.0 / (dat.theta * std::pow(dat.q0, dat.theta)));
  rep.Ucal_min = 1e300;
  rep.Ucal_max = dat.vacuum ? 0.0 : -1e300;
  if (!dat.vacuum)
    for (std::size_t i = 0; i < g.np; ++i)
      for (std::size_t j = 0; j < g.nq; ++j) {
        const double U = transport_speed(g.fp.at(i, j), g.fm.at(i, j),
                                         g.logOm.at(i, j), g.r2.at(i, j), dat.P);
        rep.Ucal_min = std::min(rep.Ucal_min, U);
        rep.Ucal_max = std::max(rep.Ucal_max, U);
      }
  else
    rep.Ucal_min = 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// certificate

FlattenReport certify_naked_singularity(const CharacteristicGrid& g,
                                        const CharacteristicData& dat,
                                        const DnConfig& cfg) {
  FlattenReport rep{};
  const ModelParams& P = dat.P;
  const std::size_t np = g.np, nq = g.nq;
  const double dt = g.t[1] - g.t[0];
  rep.beta = dat.beta;

  rep.m_final_min = 1e300;
  rep.m_final_max = -1e300;
  for (std::size_t i = 0; i < np; ++i) {
    const double mi = g.m.at(i, nq - 1);
    if (!std::isfinite(mi))
      throw InvariantBreach("certify_naked_singularity: non-finite final mass");
    rep.m_final_min = std::min(rep.m_final_min, mi);
    rep.m_final_max = std::max(rep.m_final_max, mi);
  }

  const Field2 M = mass_integrand_field(g, P);
  long viol = 0;
  double mmax = 0;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nq; ++j) mmax = std::max(mmax, std::abs(M.at(i, j)));
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nq; ++j)
      if (M.at(i, j) < -1e-13 * mmax) ++viol;
  rep.mass_violations = viol;

  // tail decay rate of the mass integrand (log-log slope over the last decade)
  {
    const std::size_t i = np / 2;
    const std::size_t dec = std::size_t(std::lround(std::log(10.0) / dt));
    const std::size_t j0 = nq > dec + 1 ? nq - 1 - dec : 1;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long n = 0;
    for (std::size_t j = j0; j < nq; ++j) {
      const double Mq = M.at(i, j) * g.q[j];
      if (!(Mq > 1e-280)) continue;
      const double x = g.t[j], y = std::log(Mq);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++n;
    }
    rep.tail_slope = n >= 3 ? (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx)
                            : -1e300;
  }

  // mass aspect 2m/r on the outgoing row, before and after the taper window
  {
    auto tmr = [&](std::size_t j) {
      return 1.0 + g.sfrak.at(0, j) * g.dqr2.at(0, j) /
                       (g.r2.at(0, j) * std::exp(2.0 * g.logOm.at(0, j)));
    };
    std::size_t jtr = 0;
    for (std::size_t j = 0; j < nq; ++j)
      if (dat.q[j] <= dat.q_taper_lo) jtr = j;
    rep.flatness_trunc = tmr(jtr);
    rep.flatness_limit = tmr(nq - 1);
    if (dat.chart.pr) {
      const DnChart& ch = dat.chart;
      rep.mass_aspect_bg = ch.strip(ch.u_of_Y(0.0)).two_m_r;
    }
  }

  // affine length of the ingoing curves hitting the scaling origin, probed at
  // eight outgoing anchors across the last two decades
  {
    const int nanch = 8;
    const double tmax = g.t[nq - 1];
    const double dp = g.p[1] - g.p[0];
    std::vector<double> ells;
    for (int n = 0; n < nanch; ++n) {
      const double tn = tmax - 2.0 * std::log(10.0) * double(nanch - 1 - n) / (nanch - 1);
      std::size_t j = std::size_t(std::lround(tn / dt));
      j = std::min(j, nq - 1);
      const double lOm0 = g.logOm.at(0, j);
      const double Om2n = std::exp(2.0 * lOm0);
      std::vector<double> w(np);
      for (std::size_t i = 0; i < np; ++i)
        w[i] = Om2n / 4.0 + 2.0 * (g.logOm.at(i, j) - lOm0);
      double ell = 0;
      for (std::size_t i = 1; i < np; ++i) ell += 0.5 * dp * (w[i - 1] + w[i]);
      ell += 0.5 * dp * (3.0 * w[np - 1] - w[np - 2]);  // sliver up to p = 0
      ells.push_back(ell);
      rep.affine.push_back({g.q[j], ell, Om2n});
    }
    const double emax = *std::max_element(ells.begin(), ells.end());
    const double emin = *std::min_element(ells.begin(), ells.end());
    rep.affine_spread = (emax - emin) / std::max(median_of(ells), 1e-300);
  }

  {
    const double dp = g.p[1] - g.p[0];
    double worst = 0;
    for (std::size_t j = 0; j < nq; ++j)
      for (std::size_t i = 1; i + 1 < np; ++i)
        worst = std::max(worst, std::abs(g.logOm.at(i + 1, j) - g.logOm.at(i - 1, j)) /
                                    (2.0 * dp));
    rep.dplogOm_max = worst;
  }
  return rep;
}

}  // namespace rlp
