#include "rlp/shooter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rlp/fit.hpp"
#include "rlp/parallel.hpp"
#include "rlp/roots.hpp"

namespace rlp {
namespace {

std::vector<Event<3>> interior_events(const ModelParams& P, const ShooterConfig& cfg) {
  std::vector<Event<3>> evs(3);
  evs[0] = {[](double, const Vec<3>& y) { return y[1] - 1.0 / 3.0; }, -1, true};
  evs[1] = {[](double, const Vec<3>& y) { return y[0] - y[1]; }, -1, true};
  evs[2] = {[P, cfg](double x, const Vec<3>& y) {
              const SonicTerms t = sonic_terms({x, y[0], y[1]}, P);
              return t.B - cfg.b_floor * (1 + t.Dme);
            },
            -1, true};
  return evs;
}

}  // namespace

ShotProbe classify_from_window(const SonicWindow& win, const ModelParams& P,
                               const ShooterConfig& cfg, Trajectory<3>* traj) {
  const double xk = win.xstar * (1 - 0.5 * win.delta_h);
  const auto seed = eval_expansion(win, xk);
  auto f = [&P](double x, const Vec<3>& y) {
    const auto d = rhs_radial({x, y[0], y[1]}, P);
    return Vec<3>{d[0], d[1], (1 + P.epsilon) / (x * (y[1] + P.epsilon))};
  };
  OdeOptions opts;
  opts.rtol = cfg.rtol;
  opts.atol = cfg.atol;
  const auto res = integrate<3>(f, xk, Vec<3>{seed[0], seed[1], 0.0}, cfg.x_cut, opts,
                                interior_events(P, cfg), traj);
  ShotProbe pr;
  pr.x_stop = res.t;
  pr.D_stop = res.y[0];
  pr.W_stop = res.y[1];
  if (res.reason == OdeStop::Event) {
    pr.cls = (res.hits.back().index == 0) ? ShotClass::WUnder : ShotClass::DWCross;
  } else if (res.reason == OdeStop::ReachedEnd) {
    pr.cls = (res.y[1] < 1.0 / 3.0) ? ShotClass::WUnder : ShotClass::DWCross;
  }
  return pr;
}

ShotProbe classify(double xstar, const ModelParams& P, const ShooterConfig& cfg) {
  try {
    const SonicWindow win = sonic_window(xstar, P, cfg.N_max);
    return classify_from_window(win, P, cfg);
  } catch (const Error&) {
    return {};
  }
}

ShootOutcome shoot(const ModelParams& P, const ShooterConfig& cfg) {
  // scan the admissible interval for a classification change
  std::vector<double> xs(cfg.n_scan);
  std::vector<ShotClass> cls(cfg.n_scan, ShotClass::Invalid);
  for (int i = 0; i < cfg.n_scan; ++i)
    xs[i] = cfg.x_lo + (cfg.x_hi - cfg.x_lo) * i / (cfg.n_scan - 1);
  parallel_for(cfg.n_scan,
               [&](std::size_t i) { cls[i] = classify(xs[i], P, cfg).cls; });

  int ilo = -1, ihi = -1, n_valid = 0;
  auto find_pair = [&] {
    ilo = ihi = -1;
    n_valid = 0;
    int prev = -1;
    for (int i = 0; i < static_cast<int>(xs.size()); ++i) {
      if (cls[i] == ShotClass::Invalid) continue;
      ++n_valid;
      if (prev >= 0 && cls[i] != cls[prev] && ilo < 0) {
        ilo = prev;
        ihi = i;
      }
      prev = i;
    }
  };
  find_pair();

  // The two-class window shrinks as epsilon grows and can end up narrower than
  // the scan spacing where it abuts the inadmissible band; subdivide the
  // valid/invalid gaps until a differing valid pair shows up.
  for (int depth = 0; ilo < 0 && depth < 4; ++depth) {
    std::vector<double> xr;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
      if ((cls[i] == ShotClass::Invalid) != (cls[i + 1] == ShotClass::Invalid))
        for (int k = 1; k < cfg.n_scan; ++k)
          xr.push_back(xs[i] + (xs[i + 1] - xs[i]) * k / cfg.n_scan);
    if (xr.empty()) break;
    std::vector<ShotClass> cr(xr.size(), ShotClass::Invalid);
    parallel_for(xr.size(),
                 [&](std::size_t i) { cr[i] = classify(xr[i], P, cfg).cls; });
    xs.insert(xs.end(), xr.begin(), xr.end());
    cls.insert(cls.end(), cr.begin(), cr.end());
    std::vector<std::size_t> ord(xs.size());
    std::iota(ord.begin(), ord.end(), std::size_t{0});
    std::sort(ord.begin(), ord.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> xs2(xs.size());
    std::vector<ShotClass> cls2(xs.size());
    for (std::size_t i = 0; i < ord.size(); ++i) {
      xs2[i] = xs[ord[i]];
      cls2[i] = cls[ord[i]];
    }
    xs.swap(xs2);
    cls.swap(cls2);
    find_pair();
  }
  if (ilo < 0) throw RootFailure("shoot: no classification change on the scan grid");

  double lo = xs[ilo], hi = xs[ihi];
  ShotClass cls_lo = cls[ilo];
  while (true) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;  // bracket exhausted in fp
    const ShotClass cm = classify(mid, P, cfg).cls;
    if (cm == ShotClass::Invalid)
      throw RootFailure("shoot: classification lost inside the bracket");
    if (cm == cls_lo)
      lo = mid;
    else
      hi = mid;
  }

  ShootOutcome out;
  out.bracket = hi - lo;
  out.xstar = lo;
  out.n_scan_valid = n_valid;
  out.window = sonic_window(out.xstar, P, cfg.N_max);
  out.x_kick = out.window.xstar * (1 - 0.5 * out.window.delta_h);

  auto f = [&P](double x, const Vec<3>& y) {
    const auto d = rhs_radial({x, y[0], y[1]}, P);
    return Vec<3>{d[0], d[1], (1 + P.epsilon) / (x * (y[1] + P.epsilon))};
  };
  OdeOptions opts;
  opts.rtol = cfg.rtol;
  opts.atol = cfg.atol;
  const auto evs = interior_events(P, cfg);

  // upper piece, down to the hand-off radius
  const auto seed = eval_expansion(out.window, out.x_kick);
  Trajectory<3> piece_a;
  const auto res_a = integrate<3>(f, out.x_kick, Vec<3>{seed[0], seed[1], 0.0},
                                  cfg.x_mid, opts, evs, &piece_a);
  if (res_a.reason != OdeStop::ReachedEnd)
    throw RootFailure("shoot: tuned trajectory stops above the hand-off radius");
  const Vec<3> y_mid = res_a.y;

  // stage two: the growing mode amplifies fp-level location error beyond the
  // target accuracy at the cut, so re-bisect a W perturbation at x_mid
  auto probe2 = [&](double dw) {
    const Vec<3> y0{y_mid[0], y_mid[1] + dw, y_mid[2]};
    const auto r = integrate<3>(f, cfg.x_mid, y0, cfg.x_cut, opts, evs);
    if (r.reason == OdeStop::Event)
      return (r.hits.back().index == 0) ? ShotClass::WUnder : ShotClass::DWCross;
    if (r.reason == OdeStop::ReachedEnd)
      return (r.y[1] < 1.0 / 3.0) ? ShotClass::WUnder : ShotClass::DWCross;
    return ShotClass::Invalid;
  };
  double dlo = -cfg.delta0, dhi = cfg.delta0;
  const ShotClass c2lo = probe2(dlo), c2hi = probe2(dhi);
  if (c2lo == ShotClass::Invalid || c2hi == ShotClass::Invalid || c2lo == c2hi)
    throw BracketLost("shoot: stage-two bracket does not straddle the solution");
  const double dfloor = 0.25 * std::abs(y_mid[1]) *
                        std::numeric_limits<double>::epsilon();
  while (dhi - dlo > dfloor) {
    const double mid = 0.5 * (dlo + dhi);
    if (!(mid > dlo && mid < dhi)) break;
    if (probe2(mid) == c2lo)
      dlo = mid;
    else
      dhi = mid;
  }
  out.w_retune = 0.5 * (dlo + dhi);

  Trajectory<3> piece_b;
  const Vec<3> y0b{y_mid[0], y_mid[1] + out.w_retune, y_mid[2]};
  const auto res_b = integrate<3>(f, cfg.x_mid, y0b, cfg.x_cut, opts, evs, &piece_b);
  if (res_b.reason != OdeStop::ReachedEnd)
    throw RootFailure("shoot: re-tuned trajectory still stops before the cut");
  out.D_cut = res_b.y[0];
  out.W_cut = res_b.y[1];

  out.traj = std::move(piece_a);
  out.traj.steps.insert(out.traj.steps.end(), piece_b.steps.begin(),
                        piece_b.steps.end());
  out.traj.t_end = piece_b.t_end;
  out.traj.y_end = piece_b.y_end;

  verify_origin(out, P, cfg);
  return out;
}

void verify_origin(ShootOutcome& out, const ModelParams& P, const ShooterConfig& cfg) {
  const double cut = cfg.x_cut;
  const double D_cut = out.traj.eval(cut)[0];

  auto fdf = [&](double R0) {
    const double h = 1e-7 * (1 + std::abs(R0));
    const double g = origin_expand(R0, P, cfg.N_max).eval(cut)[0] - D_cut;
    const double gp = origin_expand(R0 + h, P, cfg.N_max).eval(cut)[0];
    const double gm = origin_expand(R0 - h, P, cfg.N_max).eval(cut)[0];
    return std::pair<double, double>{g, (gp - gm) / (2 * h)};
  };
  out.R0_origin = newton_plain(fdf, D_cut, 1e-14, 40);

  const OriginExpansion oe = origin_expand(out.R0_origin, P, cfg.N_max);
  double err = 0;
  for (int i = 0; i < 33; ++i) {
    const double x = cut * (1 + i / 32.0);
    const auto a = oe.eval(x);
    const auto b = out.traj.eval(x);
    err = std::max(err, std::abs(a[0] - b[0]));
    err = std::max(err, std::abs(a[1] - b[1]));
  }
  out.match_err = err;

  std::vector<double> lx, lw;
  for (int i = 0; i < 33; ++i) {
    const double x = 2 * cut * std::pow(10.0, i / 32.0);
    const double w = out.traj.eval(x)[1] - 1.0 / 3.0;
    if (w > 0) {
      lx.push_back(std::log(x));
      lw.push_back(std::log(w));
    }
  }
  if (lx.size() < 8) throw FitFailure("verify_origin: too few usable decay samples");
  out.exponent = fit_line(lx, lw).slope;
}

}  // namespace rlp
