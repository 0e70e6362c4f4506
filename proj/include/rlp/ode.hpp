#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "rlp/errors.hpp"
#include "rlp/roots.hpp"

namespace rlp {

// Adaptive Dormand-Prince 5(4) with the classical quartic interpolant and
// sign-change event location on the interpolant.  Trial stages that throw
// DomainError/SonicProximity are treated as rejected steps (the controller
// backs off), so the right-hand side may guard its own domain.
template <std::size_t N>
struct OdeState {
  using Vec = std::array<double, N>;
};

template <std::size_t N>
using Vec = std::array<double, N>;

template <std::size_t N>
struct DenseStep {
  double t, h;                       // step start / signed width
  Vec<N> r1, r2, r3, r4, r5;         // interpolant data
  Vec<N> eval(double tt) const {
    const double th = (tt - t) / h, th1 = 1.0 - th;
    Vec<N> y;
    for (std::size_t i = 0; i < N; ++i)
      y[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
    return y;
  }
  Vec<N> eval_deriv(double tt) const {
    const double th = (tt - t) / h, th1 = 1.0 - th;
    Vec<N> d;
    for (std::size_t i = 0; i < N; ++i)
      d[i] = (r2[i] + (1.0 - 2.0 * th) * r3[i] + th * (2.0 - 3.0 * th) * r4[i] +
              2.0 * th * th1 * (1.0 - 2.0 * th) * r5[i]) / h;
    return d;
  }
};

template <std::size_t N>
struct Trajectory {
  std::vector<DenseStep<N>> steps;
  double t_start = 0, t_end = 0;
  Vec<N> y_end{};

  bool empty() const { return steps.empty(); }
  // locate the step containing t (integration may run in either direction)
  const DenseStep<N>& locate(double t) const {
    if (steps.empty()) throw DomainError("trajectory: empty");
    const double dir = (t_end >= t_start) ? 1.0 : -1.0;
    std::size_t lo = 0, hi = steps.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if ((t - steps[mid].t) * dir >= 0) lo = mid; else hi = mid - 1;
    }
    return steps[lo];
  }
  Vec<N> eval(double t) const { return locate(t).eval(t); }
  Vec<N> eval_deriv(double t) const { return locate(t).eval_deriv(t); }
};

template <std::size_t N>
struct Event {
  std::function<double(double, const Vec<N>&)> g;
  int direction = 0;    // +1: only -to+, -1: only +to-, 0: any crossing
  bool terminal = true;
};

template <std::size_t N>
struct EventHit {
  int index = -1;
  double t = 0;
  Vec<N> y{};
};

enum class OdeStop { ReachedEnd, Event, StepUnderflow, MaxSteps };

template <std::size_t N>
struct OdeResult {
  OdeStop reason = OdeStop::ReachedEnd;
  double t = 0;
  Vec<N> y{};
  std::vector<EventHit<N>> hits;  // terminal hit (if any) is last
  long n_accepted = 0, n_rejected = 0;
};

struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-13;
  double h0 = 0;  // 0 => automatic
  double hmax = std::numeric_limits<double>::infinity();
  long max_steps = 20'000'000;
  bool throw_on_underflow = true;
};

namespace detail {
inline constexpr double dp_c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double dp_a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
inline constexpr double dp_e[7] = {71.0 / 57600,  0.0,          -71.0 / 16695,
                                   71.0 / 1920,   -17253.0 / 339200,
                                   22.0 / 525,    -1.0 / 40};
inline constexpr double dp_d[7] = {
    -12715105075.0 / 11282082432.0, 0.0,
    87487479700.0 / 32700410799.0,  -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0, -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0};
}  // namespace detail

// F: Vec<N> f(double t, const Vec<N>& y)
template <std::size_t N, class F>
OdeResult<N> integrate(F&& f, double t0, Vec<N> y0, double t1,
                       const OdeOptions& opts = {},
                       const std::vector<Event<N>>& events = {},
                       Trajectory<N>* traj = nullptr) {
  using namespace detail;
  OdeResult<N> res;
  if (traj) { traj->steps.clear(); traj->t_start = t0; }
  const double dir = (t1 >= t0) ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  if (span == 0) { res.t = t0; res.y = y0; return res; }

  double t = t0;
  Vec<N> y = y0;
  Vec<N> k[7];
  k[0] = f(t, y);

  std::vector<double> gprev(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) gprev[e] = events[e].g(t, y);

  double h = opts.h0 != 0 ? std::abs(opts.h0) : 0;
  if (h == 0) {
    double ynorm = 0, fnorm = 0;
    for (std::size_t i = 0; i < N; ++i) {
      ynorm = std::max(ynorm, std::abs(y[i]));
      fnorm = std::max(fnorm, std::abs(k[0][i]));
    }
    h = span / 100.0;
    if (fnorm > 0) h = std::min(h, 0.01 * (1.0 + ynorm) / fnorm);
    h = std::max(h, span * 1e-12);
  }
  h = std::min(h, opts.hmax);
  const double hmin = span * 1e-15;

  long accepted = 0, rejected = 0;
  bool last = false;
  while (true) {
    if (accepted + rejected > opts.max_steps) {
      res.reason = OdeStop::MaxSteps; res.t = t; res.y = y;
      res.n_accepted = accepted; res.n_rejected = rejected;
      if (traj) { traj->t_end = t; traj->y_end = y; }
      return res;
    }
    if (h < hmin) {
      if (opts.throw_on_underflow)
        throw StiffnessFailure("ode: step size underflow at t=" + std::to_string(t));
      res.reason = OdeStop::StepUnderflow; res.t = t; res.y = y;
      res.n_accepted = accepted; res.n_rejected = rejected;
      if (traj) { traj->t_end = t; traj->y_end = y; }
      return res;
    }
    last = false;
    double hs = h;
    if ((t + dir * hs - t1) * dir >= 0) { hs = std::abs(t1 - t); last = true; }
    const double hstep = dir * hs;

    // stages
    bool bad = false;
    Vec<N> ynew{}, yerr{};
    try {
      for (int s = 1; s < 7; ++s) {
        Vec<N> ytmp;
        for (std::size_t i = 0; i < N; ++i) {
          double acc = 0;
          for (int j = 0; j < s; ++j) acc += dp_a[s][j] * k[j][i];
          ytmp[i] = y[i] + hstep * acc;
        }
        k[s] = f(t + dp_c[s] * hstep, ytmp);
        if (s == 6) ynew = ytmp;  // FSAL: stage 7 input is the 5th-order result
      }
      for (std::size_t i = 0; i < N; ++i) {
        double eacc = 0;
        for (int j = 0; j < 7; ++j) eacc += dp_e[j] * k[j][i];
        yerr[i] = hstep * eacc;
      }
      for (std::size_t i = 0; i < N; ++i)
        if (!std::isfinite(ynew[i]) || !std::isfinite(yerr[i])) { bad = true; break; }
    } catch (const DomainError&) {
      bad = true;
    } catch (const SonicProximity&) {
      bad = true;
    }
    if (bad) { h = 0.25 * hs; ++rejected; continue; }

    double errnorm = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sc = opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double r = yerr[i] / sc;
      errnorm += r * r;
    }
    errnorm = std::sqrt(errnorm / N);

    if (errnorm > 1.0) {
      h = hs * std::max(0.2, 0.9 * std::pow(errnorm, -0.2));
      ++rejected;
      continue;
    }

    // accepted: build interpolant
    DenseStep<N> st;
    st.t = t; st.h = hstep; st.r1 = y;
    for (std::size_t i = 0; i < N; ++i) {
      const double ydiff = ynew[i] - y[i];
      const double bspl = hstep * k[0][i] - ydiff;
      st.r2[i] = ydiff;
      st.r3[i] = bspl;
      st.r4[i] = ydiff - hstep * k[6][i] - bspl;
      double dacc = 0;
      for (int j = 0; j < 7; ++j) dacc += dp_d[j] * k[j][i];
      st.r5[i] = hstep * dacc;
    }

    const double tnew = last ? t1 : t + hstep;

    // event detection on this step
    int hit_idx = -1;
    double hit_t = 0;
    for (std::size_t e = 0; e < events.size(); ++e) {
      const double g0 = gprev[e];
      const double g1 = events[e].g(tnew, ynew);
      const bool crossing =
          (g0 < 0 && g1 >= 0 && events[e].direction >= 0) ||
          (g0 > 0 && g1 <= 0 && events[e].direction <= 0);
      gprev[e] = g1;
      if (!crossing) continue;
      double tc;
      if (g1 == 0) {
        tc = tnew;
      } else {
        tc = brent([&](double tt) { return events[e].g(tt, st.eval(tt)); }, t, tnew,
                   1e-14 * (std::abs(t) + std::abs(tnew) + 1.0));
      }
      EventHit<N> hit;
      hit.index = static_cast<int>(e);
      hit.t = tc;
      hit.y = st.eval(tc);
      res.hits.push_back(hit);
      if (events[e].terminal) {
        // keep the earliest terminal hit in step direction
        if (hit_idx < 0 || (tc - hit_t) * dir < 0) { hit_idx = static_cast<int>(e); hit_t = tc; }
      }
    }
    if (traj) traj->steps.push_back(st);
    ++accepted;

    if (hit_idx >= 0) {
      res.reason = OdeStop::Event;
      res.t = hit_t;
      res.y = st.eval(hit_t);
      res.n_accepted = accepted; res.n_rejected = rejected;
      // move the terminal hit to the back
      for (std::size_t q = 0; q + 1 < res.hits.size(); ++q)
        if (res.hits[q].index == hit_idx && res.hits[q].t == hit_t)
          std::swap(res.hits[q], res.hits.back());
      if (traj) { traj->t_end = hit_t; traj->y_end = res.y; }
      return res;
    }

    t = tnew;
    y = ynew;
    k[0] = k[6];  // FSAL
    if (last) {
      res.reason = OdeStop::ReachedEnd;
      res.t = t; res.y = y;
      res.n_accepted = accepted; res.n_rejected = rejected;
      if (traj) { traj->t_end = t; traj->y_end = y; }
      return res;
    }
    h = std::min(opts.hmax, hs * std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(errnorm, 1e-10), -0.2))));
  }
}

}  // namespace rlp
