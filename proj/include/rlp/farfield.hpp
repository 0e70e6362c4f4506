#pragma once
#include "rlp/ode.hpp"
#include "rlp/sonic_series.hpp"

namespace rlp {

struct FarFieldConfig {
  double x_far = 1e4;
  int n_fit = 33;  // samples over the last decade for the tail fits
  double rtol = 1e-10, atol = 1e-13;
};

struct FarField {
  Trajectory<3> traj;  // (D, W, l) over t = log x; l raw, 0 at the outward kick
  double x_kick = 0, x_far = 0;
  double d2 = 0;         // limit of D^(1+eta) x^2
  double w1 = 0;         // leading coefficient of W - 1 (negative)
  double gamma_fit = 0;  // fitted decay slope of D
  double w_exp = 0;      // fitted decay slope of 1 - W
  double c_norm = 0;     // additive l correction fixing the scale at infinity
  double ell_sonic = 0;  // normalized l at the sonic point
  double ell_kick_in = 0;  // normalized l at the inward kick
  double ystar_bar = 0;    // exp(ell_sonic)

  double ell_true(double x) const;
  std::array<double, 3> state(double x) const;  // (D, W, normalized l)
};

FarField far_field(const SonicWindow& win, const ModelParams& P,
                   const FarFieldConfig& cfg = {});

}  // namespace rlp
