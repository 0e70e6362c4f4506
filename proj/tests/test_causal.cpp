#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rlp/causal.hpp"
#include "rlp/extension.hpp"
#include "rlp/farfield.hpp"
#include "rlp/model.hpp"
#include "rlp/shooter.hpp"

using namespace rlp;

namespace {

const ModelParams& P3() {
  static ModelParams P = ModelParams::make(1e-3);
  return P;
}

const ShootOutcome& tuned3() {
  static ShootOutcome out = shoot(P3());
  return out;
}

const FarField& ff3() {
  static FarField ff = far_field(tuned3().window, P3());
  return ff;
}

const YZeroSeries& ser3() {
  static YZeroSeries s = y_zero_series(chart_d2(ff3().d2, P3()), ff3().w1, P3());
  return s;
}

const Extension& ext3() {
  static Extension e = extend(ser3(), P3());
  return e;
}

const CausalProfile& profile3() {
  static CausalProfile pr = make_profile(tuned3(), ff3(), ext3(), P3());
  return pr;
}

const CausalSkeleton& skeleton3() {
  static CausalSkeleton sk = find_null_rays(profile3());
  return sk;
}

double A_of(const ModelParams& P) {
  return (1 + P.epsilon) * (1 + P.epsilon) / ((1 - P.epsilon) * (1 - P.epsilon));
}

// interior-chart radial null potential, assembled from the profile state by
// a route independent of eval_F's exterior chart
double F_from_interior(double Y, const CausalProfile& pr) {
  const ModelParams& P = pr.P;
  const double eps = P.epsilon;
  const double x = pr.x_of_Y(Y);
  const auto v = pr.interior(x);
  const double D = v[0], W = v[1];
  const double Dme = std::pow(D, -P.eta);
  const double br =
      Dme + eps * x * x * (W - 1) * (W - 1) - 4 * eps * D * W * x * x;
  return A_of(P) * br / (x * x * (W + eps) * (W + eps));
}

}  // namespace

TEST_CASE("similarity charts: z(Y) and Y(z) invert each other") {
  const ModelParams& P = P3();
  for (double Y : {1e-8, 1e-4, 0.03, 0.7, 42.0, 1e9}) {
    for (double s : {1.0, -1.0}) {
      const double z = z_of_Y(s * Y, P);
      // opposite signs, exact power law
      CHECK(z * s < 0);
      CHECK(std::abs(z) ==
            doctest::Approx(std::pow(Y, P.one_plus_eta)).epsilon(1e-14));
      CHECK(Y_of_z(z, P) == doctest::Approx(s * Y).epsilon(1e-14));
    }
  }
  CHECK(z_of_Y(0.0, P) == 0.0);
  CHECK(Y_of_z(0.0, P) == 0.0);
}

TEST_CASE("profile: seams are glued and the coordinate maps invert") {
  const CausalProfile& pr = profile3();
  // continuity across both window seams
  for (double xs : {pr.x_kick_in, pr.x_kick_out}) {
    const auto a = pr.interior(xs * (1 - 1e-9));
    const auto b = pr.interior(xs * (1 + 1e-9));
    CHECK(std::abs(b[0] - a[0]) < 1e-6);
    CHECK(std::abs(b[1] - a[1]) < 1e-6);
    CHECK(std::abs(b[2] - a[2]) < 1e-6);
  }
  // log-scale normalization: ell matches the far-field gauge at the seam
  CHECK(pr.interior(pr.x_kick_out)[2] ==
        doctest::Approx(ff3().ell_true(pr.x_kick_out)).epsilon(1e-9));
  // round trips
  for (double x : {0.005, 0.4, 2.34, 7.3, 900.0}) {
    const double ell = pr.ell_of_x(x);
    CHECK(pr.x_of_ell(ell) == doctest::Approx(x).epsilon(1e-12));
  }
  for (double Y : {0.2, 0.5, 1.2}) {
    const double x = pr.x_of_Y(Y);
    CHECK(pr.ell_of_x(x) ==
          doctest::Approx(-P3().one_plus_eta * std::log(Y)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(pr.interior(pr.x_cut * 0.5), DomainError);
  CHECK_THROWS_AS(pr.interior(pr.x_far * 2.0), DomainError);
}

TEST_CASE("potential: regular through Y = 0 and consistent across charts") {
  const CausalProfile& pr = profile3();
  const ModelParams& P = P3();
  // finite positive limit on the collapse instant
  const double F20 = eval_F2(0.0, pr);
  CHECK(F20 > 0);
  CHECK(F20 == doctest::Approx(0.9921000308).epsilon(1e-6));
  for (double Y : {1e-9, -1e-9, 1e-6, -1e-6})
    CHECK(eval_F2(Y, pr) == doctest::Approx(F20).epsilon(1e-6));
  // exterior route against the interior-chart closed form
  CHECK(eval_F(0.04, pr) ==
        doctest::Approx(F_from_interior(0.04, pr)).epsilon(1e-6));
  CHECK(eval_F(0.9 * pr.Y_hand, pr) ==
        doctest::Approx(F_from_interior(0.9 * pr.Y_hand, pr)).epsilon(1e-5));
  // the hand-off to the interior chart itself is seamless
  CHECK(eval_F(pr.Y_hand * (1 + 1e-7), pr) ==
        doctest::Approx(eval_F(pr.Y_hand * (1 - 1e-7), pr)).epsilon(1e-5));
  CHECK_THROWS_AS(eval_F(pr.Y_edge - 1e-3, pr), DomainError);
  CHECK_THROWS_AS(eval_F(pr.Y_max * 1.5, pr), DomainError);
  // F equals A exactly on the sonic line
  CHECK(eval_F(skeleton3().Y_sp, pr) == doctest::Approx(A_of(P)).epsilon(1e-9));
  // the exterior chart's own sonic stop agrees to its overlap quality
  CHECK(ext3().Y_sp == doctest::Approx(skeleton3().Y_sp).epsilon(1e-5));
}

TEST_CASE("slope factors: product identity against the ray function") {
  const CausalProfile& pr = profile3();
  const ModelParams& P = P3();
  const double kap = (1 - P.epsilon) / (1 + P.epsilon);
  const double A = A_of(P);
  for (int i = 0; i <= 60; ++i) {
    const double Y = pr.Y_edge + (pr.Y_hand - pr.Y_edge) * (i + 0.5) / 61.0;
    const double gp = G_plus(Y, pr), gm = G_minus(Y, pr);
    const double F2 = eval_F2(Y, pr);
    const double lhs = gp * gm;
    const double direct = P.epsilon / F2 - kap * kap * Y * Y;
    CHECK(std::abs(lhs - direct) <=
          1e-12 * (1 + std::abs(lhs) + P.epsilon / F2));
    if (Y != 0) {
      const double F = eval_F(Y, pr);
      const double h = F / P.epsilon - A;
      const double viah = -P.epsilon * kap * kap * Y * Y * h / F;
      CHECK(std::abs(lhs - viah) <= 1e-12 * (1 + std::abs(lhs) + std::abs(viah) +
                                             P.epsilon / F2));
    }
  }
}

TEST_CASE("skeleton: root count, ordering, residuals and sign pattern") {
  const CausalSkeleton& sk = skeleton3();
  const CausalProfile& pr = profile3();
  const ModelParams& P = P3();
  CHECK(sk.n_roots == 2);
  REQUIRE(sk.roots.size() == 2);
  CHECK(sk.Y_N == doctest::Approx(0.0319021032181).epsilon(1e-6));
  CHECK(sk.roots[0] == doctest::Approx(-0.0319529092366).epsilon(1e-6));
  CHECK(sk.roots[1] == doctest::Approx(-0.187398108097).epsilon(1e-6));
  CHECK(sk.resid_N <= 1e-9);
  for (double r : sk.resid) CHECK(r <= 1e-9);
  // Y_ms < B2 < B1 < 0 < Y_N < Y_sp
  CHECK(sk.Y_ms < sk.roots[1]);
  CHECK(sk.roots[1] < sk.roots[0]);
  CHECK(sk.roots[0] < 0);
  CHECK(0 < sk.Y_N);
  CHECK(sk.Y_N < sk.Y_sp);

  // h = (1/eps) F - A changes sign as expected around each ray
  auto h = [&](double Y) { return eval_F(Y, pr) / P.epsilon - A_of(P); };
  CHECK(h(0.5 * sk.Y_N) < 0);
  CHECK(h(1.5 * sk.Y_N) > 0);
  CHECK(h(0.5 * (sk.roots[0] + sk.roots[1])) > 0);      // between B1 and B2
  CHECK(h(0.5 * sk.roots[0]) < 0);                      // B1 side of zero
  CHECK(h(0.5 * (sk.roots[1] + pr.Y_edge)) < 0);        // toward the edge
  // the backward cone of the origin: G_minus flips there, G_plus flips at B1
  CHECK(G_minus(0.5 * sk.Y_N, pr) > 0);
  CHECK(G_minus(1.5 * sk.Y_N, pr) < 0);
  CHECK(G_plus(0.5 * sk.roots[0], pr) > 0);
  CHECK(G_plus(0.5 * (sk.roots[0] + sk.roots[1]), pr) < 0);
}

TEST_CASE("similarity-ray character changes exactly once inside the fluid") {
  const CausalProfile& pr = profile3();
  const HMonotoneReport rep = check_H_monotone(pr);
  CHECK(rep.pass);
  CHECK(rep.n_samples >= 10'000);
  CHECK(rep.min_slope > 0);
  CHECK(rep.fd_mismatch <= 1e-6);
  CHECK(rep.min_mass_step > 0);
  CHECK(rep.x_zero == doctest::Approx(34.783957).epsilon(1e-4));
  // the interior zero of H is the ingoing ray found in the exterior chart
  CHECK(std::abs(rep.Y_zero - skeleton3().Y_N) <= 1e-6 * (1 + skeleton3().Y_N));
  // spot values and the cross-chart agreement of H itself
  CHECK(H_interior(10.0, pr) == doctest::Approx(-9.50058).epsilon(1e-4));
  CHECK(H_interior(100.0, pr) > 0);
  const double Yc = 0.5;
  CHECK(metric_at_Y(Yc, pr).H ==
        doctest::Approx(H_interior(pr.x_of_Y(Yc), pr)).epsilon(1e-5));
  CHECK_THROWS_AS(metric_at_Y(pr.Y_hand * 1.01, pr), ChartExhausted);
  CHECK_THROWS_AS(metric_at_Y(pr.Y_edge, pr), ChartExhausted);
}

TEST_CASE("radial rays: outgoing from both sides lock onto the first ray") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();
  for (double Y0 : {0.02, -0.05}) {
    const GeodesicCurve c =
        trace_radial({Y0, 1.0}, RayDir::Outgoing, pr, {}, &sk);
    CHECK(c.termination == GeoEnd::HitsB1);
    CHECK(c.Y_end == doctest::Approx(sk.roots[0]).epsilon(1e-4));
    CHECK(c.null_resid_max <= 1e-9);
    REQUIRE(c.samples.size() >= 2);
    for (std::size_t i = 1; i < c.samples.size(); ++i) {
      CHECK(c.samples[i].R > c.samples[i - 1].R);  // R grows to the future
      CHECK(c.samples[i].chart == 1);
    }
  }
}

TEST_CASE("radial rays: trapped-band capture and the center leg") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();

  // launched just inside the blow-up edge: swallowed by it
  const GeodesicCurve cms =
      trace_radial({-0.1876, 1.0}, RayDir::Outgoing, pr, {}, &sk);
  CHECK(cms.termination == GeoEnd::HitsMS);
  CHECK(cms.null_resid_max <= 1e-9);
  CHECK(cms.Y_end == doctest::Approx(pr.Y_edge).epsilon(1e-3));

  // ingoing from the pre-collapse exterior: crosses into the trapped band
  const GeodesicCurve cin =
      trace_radial({0.02, 1.0}, RayDir::Ingoing, pr, {}, &sk);
  CHECK(cin.termination == GeoEnd::HitsMS);
  CHECK(cin.null_resid_max <= 1e-9);

  // ingoing from inside the backward cone: reaches the center before the
  // collapse instant, at finite negative similarity time
  REQUIRE(G_minus(1.0, pr) < 0);
  const GeodesicCurve cc =
      trace_radial({1.0, 1.0}, RayDir::Ingoing, pr, {}, &sk);
  CHECK(cc.termination == GeoEnd::HitsCenter);
  CHECK(cc.null_resid_max <= 1e-9);
  CHECK(cc.tau_center == doctest::Approx(-28.5774).epsilon(1e-3));
  CHECK(cc.tau_center < 0);
  REQUIRE(!cc.samples.empty());
  CHECK(cc.samples.back().R < 1e-6);  // the comoving radius closes up
  for (const auto& s : cc.samples) CHECK(s.chart == 0);
  for (std::size_t i = 1; i < cc.samples.size(); ++i)
    CHECK(cc.samples[i].tau >= cc.samples[i - 1].tau - 1e-12);

  CHECK_THROWS_AS(trace_radial({pr.Y_edge - 0.01, 1.0}, RayDir::Outgoing, pr),
                  DomainError);
  CHECK_THROWS_AS(trace_radial({0.02, 0.0}, RayDir::Outgoing, pr), DomainError);
}

TEST_CASE("nonradial, zero scaling energy: confined between the cones") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();
  const ModelParams& P = P3();
  const GeodesicCurve c = trace_nonradial({0.02, 1.0}, 1.0, 0.0, +1, pr, {}, &sk);
  CHECK(c.termination == GeoEnd::HitsB1);
  CHECK(c.past_label == "N");
  CHECK(c.null_resid_max <= 1e-8);
  CHECK(c.drift_rel <= 1e-9);
  CHECK(c.R_tau0 > 0);  // it crosses the collapse instant on the way
  const double z_N = z_of_Y(sk.Y_N, P);
  const double z_1 = z_of_Y(sk.roots[0], P);
  REQUIRE(c.samples.size() >= 100);
  double tau_prev = -1e300;
  for (const auto& s : c.samples) {
    const double z = z_of_Y(s.Y, P);
    CHECK(z >= z_N - 1e-4);
    CHECK(z <= z_1 + 1e-4);
    // tau is a time function on the strip, so the ordered samples march in it
    CHECK(s.tau >= tau_prev - 1e-6 * (1 + std::abs(s.tau)));
    tau_prev = s.tau;
  }
}

TEST_CASE("nonradial: turning points sit where the potential says") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();
  const ModelParams& P = P3();
  const double x0 = 10.0;
  const double Y0 = std::exp(-pr.ell_of_x(x0) / P.one_plus_eta);
  const double H0 = H_interior(x0, pr);
  CHECK(H0 == doctest::Approx(-9.50058).epsilon(1e-4));

  // admissible: C^2/L^2 slightly above -H at the start
  const double C = std::sqrt(9.6);
  for (int branch : {+1, -1}) {
    const GeodesicCurve c =
        trace_nonradial({Y0, 1.0}, 1.0, C, branch, pr, {}, &sk);
    CHECK(c.termination == GeoEnd::HitsB1);
    CHECK(c.null_resid_max <= 1e-8);
    CHECK(c.drift_rel <= 1e-9);
    REQUIRE(c.turning[1] > 0);
    const double Ht = metric_at_Y(Y_of_z(c.turning[0], P), pr).H;
    CHECK(std::abs(Ht + C * C) <= 1e-6);
  }

  // inadmissible: a zero-energy ray cannot exist where H < 0
  CHECK_THROWS_AS(trace_nonradial({Y0, 1.0}, 1.0, 0.0, +1, pr, {}, &sk),
                  ForbiddenRegion);
  CHECK_THROWS_AS(trace_nonradial({Y0, 1.0}, 0.0, 1.0, +1, pr, {}, &sk),
                  DomainError);
}

TEST_CASE("nonradial from the post-collapse exterior: the past leg reaches "
          "the collapse instant") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();
  const double Y0 = Y_of_z(0.02, P3());
  for (double C : {2.0, -2.0}) {
    const GeodesicCurve c = trace_nonradial({Y0, 1.0}, 1.0, C, -1, pr, {}, &sk);
    CHECK(c.termination == GeoEnd::HitsB1);
    CHECK(c.past_label == "tau0");
    CHECK(c.R_tau0 > 0);
    CHECK(c.null_resid_max <= 1e-8);
    CHECK(c.drift_rel <= 1e-9);
    REQUIRE(!c.samples.empty());
    CHECK(c.samples.front().tau >= -1e-9);  // past end on the instant
    CHECK(c.samples.back().tau > 1.0);
  }
}

TEST_CASE("diagram export: deterministic, well-formed, schema-shaped") {
  const CausalProfile& pr = profile3();
  const CausalSkeleton& sk = skeleton3();
  std::vector<GeodesicCurve> curves;
  curves.push_back(trace_radial({0.02, 1.0}, RayDir::Outgoing, pr, {}, &sk));
  curves.push_back(trace_radial({1.0, 1.0}, RayDir::Ingoing, pr, {}, &sk));
  curves.push_back(trace_nonradial({0.02, 1.0}, 1.0, 0.0, +1, pr, {}, &sk));

  const std::string a = diagram_json(pr, sk, curves);
  const std::string b = diagram_json(pr, sk, curves);
  CHECK(a == b);
  // repeated tracing reproduces the bytes too
  std::vector<GeodesicCurve> again;
  again.push_back(trace_radial({0.02, 1.0}, RayDir::Outgoing, pr, {}, &sk));
  again.push_back(trace_radial({1.0, 1.0}, RayDir::Ingoing, pr, {}, &sk));
  again.push_back(trace_nonradial({0.02, 1.0}, 1.0, 0.0, +1, pr, {}, &sk));
  CHECK(diagram_json(pr, sk, again) == a);

  const auto j = nlohmann::json::parse(a);
  CHECK(j.at("type") == "causal_diagram");
  CHECK(j.at("epsilon").get<double>() == doctest::Approx(1e-3));
  const auto& js = j.at("skeleton");
  CHECK(js.at("n_roots").get<int>() == sk.n_roots);
  CHECK(js.at("outgoing_Y").size() == sk.roots.size());
  CHECK(js.at("outgoing_z").size() == sk.roots.size());
  CHECK(js.at("Y_N").get<double>() == doctest::Approx(sk.Y_N));
  CHECK(js.at("z_N").get<double>() < 0);
  CHECK(js.at("z_ms").get<double>() > 0);
  const auto& jc = j.at("curves");
  REQUIRE(jc.size() == 3);
  CHECK(jc[0].at("kind") == "radial_out");
  CHECK(jc[1].at("kind") == "radial_in");
  CHECK(jc[2].at("kind") == "nonradial");
  CHECK(jc[1].at("termination") == "center");
  CHECK(jc[2].at("past_label") == "N");
  for (const auto& e : jc) {
    REQUIRE(e.at("points").size() >= 2);
    for (const auto& p : e.at("points")) {
      REQUIRE(p.size() == 2);
      CHECK(std::isfinite(p[0].get<double>()));
      CHECK(std::isfinite(p[1].get<double>()));
    }
  }
}
