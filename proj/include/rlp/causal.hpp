#pragma once
#include <array>
#include <string>
#include <vector>

#include "rlp/extension.hpp"
#include "rlp/farfield.hpp"
#include "rlp/shooter.hpp"

namespace rlp {

// Inverse-comoving chart z = -1/y = -sgn(Y) |Y|^(1+eta); z < 0 before the
// collapse instant, z > 0 after it, z = 0 on it.
double z_of_Y(double Y, const ModelParams& P);
double Y_of_z(double z, const ModelParams& P);

struct CausalConfig {
  int n_scan = 10'000;       // resolution of the ray-root scans (per side)
  double tol_root = 1e-9;    // accepted residual of (1/eps) F - A at a ray
  double r_log_cap = 40.0;   // |log R/R_0| beyond which a ray counts as escaped
  double band_z = 0.01;      // |z| below which nonradial tracing runs in Y
  double rtol = 1e-10, atol = 1e-13;
  int n_h_samples = 10'000;  // sample count of the monotonicity sweep
};

// One assembled solution glued across its charts: the radial chart (D, W)(x)
// on [x_cut, x_far] together with the log comoving scale ell(x) (so that
// y = e^ell, normalized against the far-field areal gauge), and the
// exterior-chart extension (d, w, chi)(Y).  Holds pointers to the stage
// outputs; the owners must outlive the profile.
struct CausalProfile {
  ModelParams P;
  const ShootOutcome* sh = nullptr;
  const FarField* ff = nullptr;
  const Extension* ext = nullptr;

  double x_cut = 0, x_kick_in = 0, x_kick_out = 0, x_far = 0;
  double ell_cut = 0, ell_far = 0;
  Trajectory<1> bridge_lo, bridge_hi;  // window ell minus its sonic value
  Series Gser, Wser;  // shifted series d/Y^2 and (w-1)/Y about Y = 0
  double Y_edge = 0;  // leftmost Y served (the computed blow-up stop)
  double Y_hand = 0;  // exterior/interior hand-off, just below the sonic stop
  double Y_max = 0;   // Y of the interior cut; domain edge on the center side

  std::array<double, 3> interior(double x) const;  // (D, W, ell)
  double ell_of_x(double x) const;
  double x_of_ell(double ell) const;
  double x_of_Y(double Y) const;  // interior side, monotone in ell
};

CausalProfile make_profile(const ShootOutcome& sh, const FarField& ff,
                           const Extension& ext, const ModelParams& P);

// Radial null potential F(Y) = Y^2 e^{2 mu - 2 lam} in the exterior gauge.
// A similarity ray Y = const is null exactly where (1/eps) F equals the
// constant A = (1+eps)^2/(1-eps)^2, the value F attains on the sonic line.
// Vanishes at Y = 0 and at the massive-singularity end; continuous through
// Y = 0; DomainError outside (Y_edge, Y_max).
double eval_F(double Y, const CausalProfile& pr);

// F / Y^2; stays finite and positive through Y = 0.
double eval_F2(double Y, const CausalProfile& pr);

// Slope factors of the two radial null congruences,
//   G_pm(Y) = sqrt(eps) |Y| / sqrt(F) pm kappa Y,  kappa = (1-eps)/(1+eps):
// outgoing rays obey d log R / dY = -1/G_plus, ingoing ones +1/G_minus.
// Zeros of G_plus sit at Y < 0 (the rays B_1, B_2, ...), the single zero of
// G_minus at Y = Y_N > 0 (the backward cone of the scaling origin).
double G_plus(double Y, const CausalProfile& pr);
double G_minus(double Y, const CausalProfile& pr);

// z-chart metric data with analytic Y-derivatives:
//   g = e^{-2s} [ -(e2mu/eps) dz^2 + 2 (e2mu/eps) z dz ds
//                 + (e2lam - (e2mu/eps) z^2) ds^2 + chi^2 dphi^2 ],
// where s = -log R.  Packaged as combinations that stay smooth through
// Y = 0: Gme = (d/Y^2)^-eta, with e2mu = Gme |Y|^{-2 eta} / (1+eps)^2 and
// e2mu z^2 / eps = Gme Y^2 / (eps (1+eps)^2).  H is the ds^2 coefficient
// over chi^2; its sign decides whether the similarity ray through the point
// is timelike (H > 0) or spacelike (H < 0).  Served on (Y_edge, Y_hand].
struct MetricPoint {
  double w = 0, dw = 0;
  double Gme = 0, dGme = 0;
  double chi2 = 0, dchi2 = 0;
  double e2lam = 0, de2lam = 0;
  double H = 0;
};
MetricPoint metric_at_Y(double Y, const CausalProfile& pr);

// H on the radial chart as a pure function of the local state,
//   H(x) = [ (W+eps)^2 / bracket - D^-eta / (eps x^2) ] / (1+eps)^2,
// and its closed-form slope along solutions (no derivatives of the state
// enter; the flow equations have been eliminated).
double H_interior(double x, const CausalProfile& pr);
double H_slope_interior(double x, const CausalProfile& pr);

// The self-similar null rays: the unique ingoing one at Y_N > 0 and the
// outgoing ones B_1, ..., B_n at negative Y, descending (B_1 nearest zero,
// the Cauchy horizon of the collapse endpoint).
struct CausalSkeleton {
  double Y_N = 0;
  std::vector<double> roots;   // outgoing ray coordinates, descending
  double Y_sp = 0, Y_ms = 0;
  int n_roots = 0;
  double resid_N = 0;          // |(1/eps) F - A| at Y_N
  std::vector<double> resid;   // same per outgoing root
};

// Scans (1/eps) F - A on both sides of Y = 0 with end-refined grids,
// polishes every sign change, and checks the ordering
// Y_ms < Y_n < ... < Y_1 < 0 < Y_N < Y_sp.  RootCountError when fewer than
// two outgoing roots appear or the ingoing root is not unique.
CausalSkeleton find_null_rays(const CausalProfile& pr,
                              const CausalConfig& cfg = {});

enum class GeoKind { RadialIn, RadialOut, NonRadial };
enum class RayDir { Ingoing, Outgoing };
enum class GeoEnd { ReachesInfinity, HitsCenter, HitsB1, HitsMS, TurningPoint };

struct GeoSample {
  double Y = 0, R = 0;
  double tau = 0;  // similarity time z R / sqrt(eps), z = -sgn(Y)|Y|^(1+eta)
  int chart = 0;   // 0 radial x-chart, 1 exterior Y-chart, 2 z-chart, 3 Y-band
};

struct GeoStart {
  double Y = 0;
  double R = 1;
};

struct GeodesicCurve {
  GeoKind kind = GeoKind::RadialOut;
  double L = 0, C = 0;            // conserved angular momentum / scaling energy
  std::vector<GeoSample> samples; // ordered past -> future
  GeoEnd termination = GeoEnd::ReachesInfinity;  // future end
  std::string past_label;         // nonradial: "N", "tau0" or "turning"
  double null_resid_max = 0;  // worst re-evaluated null-condition residual
  double drift_rel = 0;       // worst conserved-component drift (nonradial)
  double tau_center = 0;      // RadialIn from inside the cone: arrival time
  double Y_end = 0;           // similarity coordinate at the future end
  double R_tau0 = 0;          // R at a tau = 0 crossing of the past leg
  std::array<double, 2> turning{};  // (z, R) at a located turning point
};

// Radial null ray from start, integrated toward its future.  Ingoing rays
// launched inside the backward cone (G_minus < 0) run on the radial chart in
// t = log x down to the cut and report the finite center arrival time;
// everything else runs in Y until it escapes (log R cap), reaches the
// massive-singularity edge, or exhausts the charts.  The optional skeleton
// only sharpens the termination label.
GeodesicCurve trace_radial(const GeoStart& start, RayDir dir,
                           const CausalProfile& pr, const CausalConfig& cfg = {},
                           const CausalSkeleton* sk = nullptr);

// Nonradial null geodesic with conserved angular momentum L != 0 and scaling
// energy C, branch +1 picking the more-ingoing root of the null condition at
// the start and -1 the more-outgoing one.  Integrates both time directions
// in the z-chart (switching to Y inside |z| < band_z), with the velocity
// evolved through the covariant components so the conservation of V_s = C is
// measured, not imposed.  ForbiddenRegion when the effective-potential bound
// eps C^2 >= a(z_0) L^2 fails at the start (a = -eps H).  The past leg stops
// at a tau = 0 crossing or a turning point; the future leg runs to escape,
// the massive-singularity edge, or the center.
GeodesicCurve trace_nonradial(const GeoStart& start, double L, double C,
                              int branch, const CausalProfile& pr,
                              const CausalConfig& cfg = {},
                              const CausalSkeleton* sk = nullptr);

// Monotonicity sweep of H along the interior solution: H must increase
// strictly from the center to the far field (so it crosses zero exactly
// once, at the ingoing cone, and no other similarity ray changes character
// inside the fluid).  Checks the closed-form slope at n_h_samples log-spaced
// points, the mass combination D^(1+eta) x^2 W for strict growth, and the
// slope formula against a five-point stencil on the FD-trustworthy band.
// MonotoneBreach on a nonpositive slope sample.
struct HMonotoneReport {
  int n_samples = 0;
  double min_slope = 0;      // least closed-form dH/dx over the sweep
  double fd_mismatch = 0;    // worst relative stencil disagreement
  double min_mass_step = 0;  // least forward step of D^(1+eta) x^2 W
  double x_zero = 0;         // the unique zero of H
  double Y_zero = 0;         // its exterior coordinate (equals Y_N)
  bool pass = false;
};
HMonotoneReport check_H_monotone(const CausalProfile& pr,
                                 const CausalConfig& cfg = {});

// Causal-diagram export: the labeled similarity rays (B_i, N, sonic, MS) and
// the traced geodesics as polylines in the (tau, R) half-plane, serialized
// as JSON text.
std::string diagram_json(const CausalProfile& pr, const CausalSkeleton& sk,
                         const std::vector<GeodesicCurve>& curves);

}  // namespace rlp
