#pragma once
#include <array>
#include <cstddef>
#include <vector>

#include "rlp/causal.hpp"

namespace rlp {

// Double-null description of the exterior slab between the backward cone N
// of the scaling origin and the first outgoing ray B_1 (the Cauchy horizon).
// Ingoing null curves carry the label q (q = q0 on the ingoing data curve
// Cbar), outgoing ones the label p (p = p0 = -delta on the outgoing data
// curve C, p -> 0 at B_1).  The labels are areal at the data curves:
// dr/dp = -1/2 exactly along Cbar and dr/dq = +1/2 exactly along C, so
// r = rstar + q/2 on C.  The conformal factor Omega^2 = 4 dr/dp dr/dq /
// (2m/r - 1) completes the metric; f+/f- are the Riemann-type fluid
// unknowns transported along the two acoustic characteristics.

struct DnConfig {
  double q0 = 1.0;
  double delta = 0.01;       // slab thickness; delta/q0 <= cap enforced
  double A0 = -1.0;          // untapered stretch of the C data; < 0 => q0
  int n_p = 128;             // p-levels on [p0, 0), uniform
  int pts_per_decade = 64;   // log-spaced q resolution
  double q_decades = 3.0;    // mesh reaches q0 * 10^q_decades
  bool taper = true;
  double theta = 0.1;        // weight exponent of the Omega seminorms
  double margin = 1.0;       // tail steepness above the integrability line
  double tol_fp = 1e-9;      // iterate-distance target
  int max_iter = 64;
  double cap_delta_ratio = 0.02;
  double tol_constraint = 1e-3;  // gate on the FD residuals of the two
                                 // null-direction constraints (FD-limited;
                                 // mesh refinement is the sharper check)
  double rtol = 1e-12, atol = 1e-15;  // chart-table integrations
  double u_deep = 30.0;      // horizon-side depth of the chart table
};

// Similarity fields at one strip coordinate u = -log((Y - Y1)/(YN - Y1)).
// s1 = (w - 1)/Y and G = d/Y^2 stay regular through Y = 0; rhop = xi/G_plus
// stays regular at the horizon root Y1 (xi = Y - Y1).
struct StripPoint {
  double u = 0, Y = 0, xi = 0;
  double chi = 0, dchi = 0;
  double G = 0, G1pe = 0, w = 0, s1 = 0;
  double Gm = 0, rhop = 0;
  double xipxi = 0;  // xi * (chi' - chi/G_plus) = chi' xi - chi rhop, < 0
  double xim = 0;    // chi' + chi/G_minus, > 0
  double Pu = 0;     // xi * dg/dY = rhop + xi/G_minus, > 0
  double V = 0, Lam = 0, two_m_r = 0;
};

// Chart backbone: potentials h+/h- of the outgoing/ingoing congruences
// (log R = h+ + const along outgoing curves, log R = h- + const along
// ingoing ones), tabulated against u and anchored so h+(Ybullet) =
// h-(Ybullet) = 0 at the slab corner (p0, q0).
struct DnChart {
  ModelParams P;
  const CausalProfile* pr = nullptr;
  double Y1 = 0, YN = 0, DY0 = 0;        // bounding rays, DY0 = YN - Y1
  double a1 = 0, a2 = 0, a3 = 0;         // jet of G_plus at Y1
  double xi_sw = 0;                      // switch of the regular ratio rhop
  Trajectory<2> hTab;                    // (h+, h-) against u, 0 at u_lo
  double u_lo = 0, u_hi = 0;
  double hpN = 0;                        // h+ at YN relative to the table
  double ubullet = 0, Ybullet = 0;       // corner coordinate
  double sh_p = 0, sh_m = 0;             // table values at ubullet
  double R0 = 0, r1 = 0, rstar = 0;      // corner scale, gauge anchors
  double delta = 0, q0 = 0;
  Trajectory<2> cTraj;                   // (u, h+) against t = log(q/q0) on C
  double t_end = 0;
  Trajectory<1> bTraj;                   // u against s = -log(p/p0) on Cbar
  double s_end = 0;

  double u_of_Y(double Y) const;
  double Y_of_u(double u) const;
  double rho_plus(double xi) const;      // xi / G_plus(Y1 + xi), regular
  double hp_tab(double u) const;
  double hm_tab(double u) const;
  double g_tab(double u) const;          // h- - h+, strictly decreasing in u
  StripPoint strip(double u) const;
  double pbar_of(double u) const;        // p label along Cbar
  double u_on_cbar(double p) const;
  std::array<double, 2> u_on_c(double q) const;  // (u, h+) along C
  double node_u(double gamma, double lo, double hi, double guess) const;
};

// Background (exact self-similar solution) at a double-null point.
struct BgPoint {
  double Y = 0, R = 0, r = 0;
  double dpr = 0, dqr = 0;
  double logOm = 0, rho = 0, uq = 0, up = 0;
  double fp = 0, fm = 0;
  double two_m_r = 0, m = 0;
};

// Data arrays on one boundary curve (s = p on Cbar, s = q on C).
struct DnBoundary {
  std::vector<double> s, fp, fm, logOm, r, dqlogOm, dp_r2, m;
};

struct CharacteristicData {
  ModelParams P;
  double p0 = 0, q0 = 0, A0 = 0, delta = 0;
  double Nplus = 0, Nminus = 0, theta = 0, beta = 0;
  bool taper = false, vacuum = false;
  double q_taper_lo = 0, q_taper_hi = 0;  // ramp window on C (log-q decade)
  double lf1p = 0, lf1m = 0;              // log f_hat at the ramp start
  std::vector<double> p, q, t;            // mesh axes, t = log(q/q0)
  DnBoundary cbar, cdat;
  DnChart chart;                          // empty (pr == nullptr) if synthetic
  StripPoint corner;                      // strip sample at the slab corner

  BgPoint background_at(double pp, double qq) const;
  std::array<double, 2> fhat_C(double qq) const;     // tapered (f+, f-)
  std::array<double, 2> fhat_Cbar(double pp) const;
};

// Row-major scalar field over the (p, q) mesh.
struct Field2 {
  std::size_t np = 0, nq = 0;
  std::vector<double> v;
  Field2() = default;
  Field2(std::size_t np_, std::size_t nq_, double fill = 0.0)
      : np(np_), nq(nq_), v(np_ * nq_, fill) {}
  double& at(std::size_t i, std::size_t j) { return v[i * nq + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * nq + j]; }
};

struct CharacteristicGrid {
  std::size_t np = 0, nq = 0;
  std::vector<double> p, q, t;
  Field2 fp, fm;             // fluid unknowns
  Field2 r2, dqr2;           // r^2 and its q-derivative
  Field2 logOm, dqlogOm;     // log Omega and its q-derivative
  Field2 sfrak;              // p-derivative of r^2, rebuilt from the fields
  Field2 m;                  // mass, rebuilt from its q-integrand
  int iter = 0;
  std::vector<double> a_hist;  // iterate distances
};

struct FluidPoint {
  double rho = 0, uq = 0, up = 0;
  double Tpp = 0, Tqq = 0, Tpq = 0;
  double Ucal = 0;  // characteristic speed scale (1+eta) Omega^2 (u^q)^2
};

// Per-node speed/source fields of the transport step and their mesh
// interpolation (log U bilinear in (p, log q); source premultiplied by q).
struct TransportFields {
  Field2 logU, qPhi;
};

struct TransportDiag {
  Field2 qexit_p, qexit_m;   // exit coordinate q* of each characteristic
  Field2 pexit_p, pexit_m;   // exit coordinate p*
  Field2 side_p, side_m;     // 0: exits C (p = p0), 1: exits Cbar (q = q0)
};

struct FixedPointReport {
  int n_iter = 0;
  bool converged = false;
  std::vector<double> a_hist;
  double contraction_ratio = 0;  // median decay of the iterate distances
  double resid_V1 = 0, resid_U1 = 0;  // normalized null-constraint residuals
  double tconstraint = 0;        // fluid closure residual after inversion
  double norm_triple = 0, norm_data = 0, norm_factor_A = 0;
  double Ucal_min = 0, Ucal_max = 0;
};

struct AffineAnchor {
  double q = 0, ell = 0, Om2 = 0;
};

struct FlattenReport {
  double flatness_trunc = 0;   // 2m/r at the last pre-ramp column
  double flatness_limit = 0;   // 2m/r at the far edge
  double mass_aspect_bg = 0;   // 4 eps d2 reference value
  double m_final_min = 0, m_final_max = 0;  // m(p, q_max) range over p
  double tail_slope = 0;       // log-slope of the mass integrand at the edge
  double beta = 0;
  std::vector<AffineAnchor> affine;
  double affine_spread = 0;
  double dplogOm_max = 0;
  long mass_violations = 0;    // measured negative mass-integrand nodes
};

// Gauge + data construction.  Solves for the corner coordinate Ybullet
// giving the requested delta/q0, anchors r1 (Cbar meets B_1) and rstar
// (C meets N), fills the boundary arrays, and applies the far tail ramp
// (multiplicative C^2 switch over one decade to pure q^-N tails, with the
// C-curve conformal factor rebuilt from its own constraint integrand).
// GaugeError when the ray skeleton cannot anchor the gauge.
CharacteristicData build_characteristic_data(const CausalProfile& pr,
                                             const CausalSkeleton& sk,
                                             const DnConfig& cfg);

// Mesh allocation without field content (axes from dat).
CharacteristicGrid make_grid_frame(const CharacteristicData& dat,
                                   const DnConfig& cfg);

// Background start: exact solution at every node, boundary rows overwritten
// with the (possibly tapered) data.
CharacteristicGrid initial_grid(const CharacteristicData& dat,
                                const DnConfig& cfg);

TransportFields make_transport_fields(const CharacteristicGrid& g,
                                      const ModelParams& P);
double interp_logU(const TransportFields& tf, const CharacteristicGrid& g,
                   double p, double q);

// One transport sweep: integrates both families of backward characteristics
// from every node to their unique exit on Cbar or C and rebuilds f+/f- in
// `out` from the exit data and the accumulated source.  Speeds and sources
// come from `g`.  CharacteristicEscape when a characteristic fails to close
// on the data curves.
void euler_transport_step(const CharacteristicGrid& g,
                          const CharacteristicData& dat,
                          CharacteristicGrid& out,
                          TransportDiag* diag = nullptr);

// One metric sweep: rebuilds dq(r^2), r^2, dq(logOm), logOm from the wave
// equations in first-order form (sources from `g`), then the auxiliary
// p-slope and the mass from their q-integrands using the fresh fields
// (including out.fp/out.fm, which the caller fills first).  PositivityLoss
// when r^2, dq(r^2) or Omega degenerate.
void metric_integration_step(const CharacteristicGrid& g,
                             const CharacteristicData& dat,
                             CharacteristicGrid& out);

// Closure of the fluid variables at one node; the pair (f+, f-) determines
// rho and both velocity components once Omega and r are known.
FluidPoint fluid_invert(double fp, double fm, double logOm, double r2,
                        const ModelParams& P);
double transport_speed(double fp, double fm, double logOm, double r2,
                       const ModelParams& P);

// Iterate-distance of the contraction argument:
// max|dlog f+-| + max|q^-2 d(r^2)| + max|q^-1 dq d(r^2)| + max|dlogOm|
// + max|q^(1+theta) dq dlogOm|.
double grid_distance(const CharacteristicGrid& a, const CharacteristicGrid& b,
                     double theta);

// Solution-space norms (sup over nodes; q-derivatives by log-q stencils).
double triple_norm(const CharacteristicGrid& g, const CharacteristicData& dat);
double data_norm(const CharacteristicData& dat);

// Normalized FD residuals of the two single-null-direction constraints,
// (V-direction, U-direction).
std::array<double, 2> constraint_residuals(const CharacteristicGrid& g,
                                           const ModelParams& P);
// Largest closure residual of T^pp T^qq = (1+eta)^2 (T^pq)^2 over nodes.
double tconstraint_residual(const CharacteristicGrid& g, const ModelParams& P);

// Damped iteration of transport + metric sweeps until the iterate distance
// falls under tol_fp.  ConfigError if delta/q0 exceeds the cap;
// ContractionFailure after three consecutive non-contracting steps.
FixedPointReport solve_fixed_point(CharacteristicGrid& g,
                                   const CharacteristicData& dat,
                                   const DnConfig& cfg);

// Certificate quantities on the converged grid: finite mass with the
// expected integrand tail, the mass-aspect plateau before the ramp and its
// collapse after, affine lengths of ingoing probes across anchor curves,
// and the boundedness ingredients of the conformal factor.
FlattenReport certify_naked_singularity(const CharacteristicGrid& g,
                                        const CharacteristicData& dat,
                                        const DnConfig& cfg);

}  // namespace rlp
