#pragma once
#include "rlp/ode.hpp"
#include "rlp/sonic_series.hpp"

namespace rlp {

// How an inward trial run ends: the velocity variable dips under its center
// value, or the trial bends back toward the degenerate surface (density
// meeting velocity, or the sonic factor bottoming out).
enum class ShotClass : int { Invalid = 0, WUnder = 1, DWCross = 2 };

struct ShooterConfig {
  double x_lo = 2.1, x_hi = 3.4;  // scan interval for the sonic location
  int n_scan = 16;
  double x_cut = 1e-3;      // inner edge of the integration
  double x_mid = 0.3;       // hand-off radius for the second tuning stage
  double delta0 = 1e-10;    // initial half-width of the stage-two bracket
  double tol_bisect = 1e-10;  // verdict bound; bisection runs to fp exhaustion
  double tol_match = 1e-6;  // center-expansion agreement bound
  int N_max = 40;
  double rtol = 1e-10, atol = 1e-13;
  double b_floor = 1e-9;  // stop when B drops under b_floor * (1 + D^-eta)
};

struct ShotProbe {
  ShotClass cls = ShotClass::Invalid;
  double x_stop = 0;
  double D_stop = 0, W_stop = 0;
};

ShotProbe classify(double xstar, const ModelParams& P, const ShooterConfig& cfg);
ShotProbe classify_from_window(const SonicWindow& win, const ModelParams& P,
                               const ShooterConfig& cfg, Trajectory<3>* traj = nullptr);

struct ShootOutcome {
  double xstar = 0;    // tuned sonic location
  double bracket = 0;  // final bracket width
  SonicWindow window;
  Trajectory<3> traj;  // (D, W, l) on [x_cut, x_kick]; l is 0 at the kick
  double x_kick = 0;
  double D_cut = 0, W_cut = 0;
  double R0_origin = 0;  // central density value matched at the cut
  double match_err = 0;  // center expansion vs integration on [cut, 2 cut]
  double exponent = 0;   // fitted decay power of W - 1/3 toward the center
  double w_retune = 0;   // stage-two correction applied to W at x_mid
  int n_scan_valid = 0;
};

// Scan, bisect on the trial classification, then re-tune at x_mid where the
// growing mode is still resolvable, integrate the interior solution, and
// match it against the center expansion.
ShootOutcome shoot(const ModelParams& P, const ShooterConfig& cfg = {});

void verify_origin(ShootOutcome& out, const ModelParams& P, const ShooterConfig& cfg);

}  // namespace rlp
