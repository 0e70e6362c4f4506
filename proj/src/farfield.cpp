#include "rlp/farfield.hpp"

#include <cmath>
#include <vector>

#include "rlp/fit.hpp"

namespace rlp {

double FarField::ell_true(double x) const { return traj.eval(std::log(x))[2] + c_norm; }

std::array<double, 3> FarField::state(double x) const {
  const auto y = traj.eval(std::log(x));
  return {y[0], y[1], y[2] + c_norm};
}

FarField far_field(const SonicWindow& win, const ModelParams& P,
                   const FarFieldConfig& cfg) {
  FarField ff;
  const double eps = P.epsilon;
  const double kappa = (1 - eps) / (1 + eps);
  ff.x_kick = win.xstar * (1 + 0.5 * win.delta_h);
  ff.x_far = cfg.x_far;

  const auto seed = eval_expansion(win, ff.x_kick);
  auto f = [&P](double t, const Vec<3>& y) {
    const double x = std::exp(t);
    const auto d = rhs_radial({x, y[0], y[1]}, P);
    return Vec<3>{x * d[0], x * d[1], (1 + P.epsilon) / (y[1] + P.epsilon)};
  };
  OdeOptions opts;
  opts.rtol = cfg.rtol;
  opts.atol = cfg.atol;
  const auto res = integrate<3>(f, std::log(ff.x_kick), Vec<3>{seed[0], seed[1], 0.0},
                                std::log(cfg.x_far), opts, {}, &ff.traj);
  if (res.reason != OdeStop::ReachedEnd)
    throw StiffnessFailure("far_field: outward integration did not reach the far edge");

  // tail fits over the last decade, against u = x^-kappa
  std::vector<double> us, v_pi, v_w, lx, lD, lomw;
  for (int i = 0; i < cfg.n_fit; ++i) {
    const double x = cfg.x_far / 10 * std::pow(10.0, i / (cfg.n_fit - 1.0));
    const auto y = ff.traj.eval(std::log(x));
    const double u = std::pow(x, -kappa);
    us.push_back(u);
    v_pi.push_back(std::pow(y[0], 1 + P.eta) * x * x);
    v_w.push_back((1 - y[1]) * std::pow(x, kappa));
    lx.push_back(std::log(x));
    lD.push_back(std::log(y[0]));
    lomw.push_back(std::log(1 - y[1]));
  }
  const auto q_pi = fit_quad(us, v_pi);
  const auto q_w = fit_quad(us, v_w);
  ff.d2 = q_pi[0];
  ff.w1 = -q_w[0];
  ff.gamma_fit = fit_line(lx, lD).slope;
  ff.w_exp = fit_line(lx, lomw).slope;

  // normalization: the comoving scale tends to the areal one at infinity,
  // so l at the far edge follows from the fitted tail of 1 - W
  const double a = q_w[0], b = q_w[1];
  const double uf = std::pow(cfg.x_far, -kappa);
  const double logchi = (a * uf / kappa + b * uf * uf / (2 * kappa)) / (1 + eps) +
                        a * a * uf * uf / (2 * kappa) / ((1 + eps) * (1 + eps));
  const double ell_raw_far = ff.traj.eval(std::log(cfg.x_far))[2];
  ff.c_norm = (std::log(cfg.x_far) - logchi) - ell_raw_far;

  // bridge across the window halves with the series values of W
  auto bridge = [&](double xa, double xb) {
    auto g = [&](double s, const Vec<1>& /*y*/) {
      const auto v = eval_expansion(win, s);
      return Vec<1>{(1 + eps) / (s * (v[1] + eps))};
    };
    OdeOptions o2;
    o2.rtol = 1e-12;
    o2.atol = 1e-15;
    return integrate<1>(g, xa, Vec<1>{0.0}, xb, o2).y[0];
  };
  const double ell_true_kick = ff.c_norm;  // raw l is zero at the outward kick
  ff.ell_sonic = ell_true_kick - bridge(win.xstar, ff.x_kick);
  ff.ell_kick_in = ff.ell_sonic - bridge(win.xstar * (1 - 0.5 * win.delta_h), win.xstar);
  ff.ystar_bar = std::exp(ff.ell_sonic);
  return ff;
}

}  // namespace rlp
