#include <cmath>
#include <cstring>

#include "doctest.h"
#include "rlp/ode.hpp"
#include "rlp/sonic_series.hpp"

using namespace rlp;

namespace {

// Classical closed forms (pressureless limit) at sonic location xs.
double cl_W0(double xs) { return 1.0 / xs; }
double cl_W1(double xs) { return 1.0 - 2.0 / xs; }
double cl_R1(double xs) { return -1.0 / xs; }
double cl_R2(double xs) {
  return (-xs * xs + 6 * xs - 7) / (2 * xs * (2 * xs - 3));
}
double cl_W2(double xs) {
  return (-5 * xs * xs + 19 * xs - 17) / (2 * xs * (2 * xs - 3));
}

}  // namespace

TEST_CASE("sonic state and slopes match the classical limit") {
  const ModelParams P = ModelParams::make(1e-8);
  for (double xs : {2.2, 2.5, 2.8}) {
    const SonicPoint sp = solve_sonic_state(xs, P);
    CHECK(std::abs(sp.W0 - cl_W0(xs)) < 1e-6);
    CHECK(std::abs(sp.B0) < 1e-12);
    const FirstOrder fo = rlp_first_coeffs(sp, P);
    CHECK(std::abs(fo.W1 - cl_W1(xs)) < 1e-5);
    CHECK(std::abs(fo.R1 - cl_R1(xs)) < 1e-5);
    CHECK(fo.disc_Q > 0);
    // the spurious branch continues the -W0 root
    CHECK(std::abs(fo.W1_ghost + cl_W0(xs)) < 1e-5);
  }
}

TEST_CASE("second-order window coefficients match the classical limit") {
  const ModelParams P = ModelParams::make(1e-8);
  for (double xs : {2.2, 2.5, 2.8}) {
    const SonicWindow win = sonic_window(xs, P, 24);
    CHECK(std::abs(win.R[2] - cl_R2(xs)) < 1e-4);
    CHECK(std::abs(win.W[2] - cl_W2(xs)) < 1e-4);
  }
  // spot values at xs = 2.5
  const SonicWindow w25 = sonic_window(2.5, P, 24);
  CHECK(w25.first.W1 == doctest::Approx(0.2).epsilon(1e-5));
  CHECK(w25.first.R1 == doctest::Approx(-0.4).epsilon(1e-5));
  CHECK(w25.R[2] == doctest::Approx(0.175).epsilon(1e-4));
  CHECK(w25.W[2] == doctest::Approx(-0.075).epsilon(1e-3));
}

TEST_CASE("branch turns unreal when the sonic point sits too low") {
  // the admissible sonic-location interval shrinks as the sound speed grows
  const ModelParams P = ModelParams::make(1e-2);
  const SonicPoint sp = solve_sonic_state(2.2, P);
  CHECK_THROWS_AS((void)rlp_first_coeffs(sp, P), BranchUnreal);
}

TEST_CASE("slope pair zeroes the order-one identity coefficients") {
  for (double eps : {1e-3, 1e-2}) {
    const ModelParams P = ModelParams::make(eps);
    for (double xs : {2.4, 2.5, 3.0}) {
      const SonicPoint sp = solve_sonic_state(xs, P);
      const FirstOrder fo = rlp_first_coeffs(sp, P);
      const Series R = {sp.W0, fo.R1}, W = {sp.W0, fo.W1};
      const auto t = window_residual_coeff(R, W, 1, xs, P);
      const double scale = xs * xs * (1 + std::abs(fo.R1) + std::abs(fo.W1));
      CHECK(std::abs(t[0]) < 1e-11 * scale);
      CHECK(std::abs(t[1]) < 1e-11 * scale);
      // and the slopes satisfy the cubic
      const auto& c = fo.cubic;
      const double pw = ((c[3] * fo.W1 + c[2]) * fo.W1 + c[1]) * fo.W1 + c[0];
      const double pg =
          ((c[3] * fo.W1_ghost + c[2]) * fo.W1_ghost + c[1]) * fo.W1_ghost + c[0];
      const double cs = std::abs(c[0]) + std::abs(c[1]) + std::abs(c[2]) + std::abs(c[3]);
      CHECK(std::abs(pw) < 1e-12 * cs);
      CHECK(std::abs(pg) < 1e-12 * cs);
    }
  }
}

TEST_CASE("probed order systems match the closed-form matrix") {
  const double eps = 0.01, xs = 2.5;
  const ModelParams P = ModelParams::make(eps);
  const double eta = P.eta;
  const SonicWindow win = sonic_window(xs, P, 40);
  const double W0 = win.point.W0, R0 = W0, R1 = win.first.R1, W1 = win.first.W1;
  const double x2 = xs * xs;
  const double H0 = (1 + 3 * eps) * W0 * W0 + 4 * eps * W0 + eps * eps - eps;
  const double H1 = 2 * ((1 + eps) * W0 + 2 * eps) * W1 + 4 * eps * W0 * R1;
  const double dpw = std::pow(R0, -eta - 1);

  double prev_det = 0;
  for (int N = 2; N <= 40; ++N) {
    Series R(win.R.begin(), win.R.begin() + N);
    Series W(win.W.begin(), win.W.begin() + N);
    const OrderSystem sys = window_order_system(R, W, N, xs, P);

    const double A11 = -2 * x2 * H0 * N + 2 * x2 * (1 - eps) * R0 * (W0 + eps) -
                       x2 * H1 * N - eta * dpw * R1 * (N + 1) - 4 * eps * x2 * W0 * R1;
    const double A12 = -x2 * R1 * (2 * (1 - eps) * W0 + 4 * eps + 4 * eps * R0) -
                       2 * x2 * (1 - eps) * R0 * (W0 + eps);
    const double A21 = -2 * x2 * (1 + eps) * W0 * (W0 + eps) -
                       (eta * dpw + 4 * eps * W0 * x2) * (W1 + 3 * W0 - 1);
    const double A22 = -2 * x2 * H0 * N - 3 * x2 * H0 + 3 * std::pow(R0, -eta) +
                       2 * x2 * (1 + eps) * W0 * (W0 + eps) -
                       x2 * (W1 + 3 * W0 - 1) *
                           (2 * (1 - eps) * W0 + 4 * eps + 4 * eps * R0) -
                       x2 * H1 * N - eta * dpw * R1 * N;

    CHECK(std::abs(sys.A[0][0] - A11) < 1e-8 * (1 + std::abs(A11)));
    CHECK(std::abs(sys.A[0][1] - A12) < 1e-8 * (1 + std::abs(A12)));
    CHECK(std::abs(sys.A[1][0] - A21) < 1e-8 * (1 + std::abs(A21)));
    CHECK(std::abs(sys.A[1][1] - A22) < 1e-8 * (1 + std::abs(A22)));
    CHECK(sys.det > 0);
    if (N > 2) CHECK(sys.det > prev_det);
    prev_det = sys.det;
  }
}

TEST_CASE("window series zero the identity coefficients at every order") {
  for (double eps : {1e-4, 1e-2}) {
    const ModelParams P = ModelParams::make(eps);
    const SonicWindow win = sonic_window(2.5, P, 40);
    double csum = 1;
    for (int N = 2; N <= 40; ++N) {
      csum += std::abs(win.R[N]) + std::abs(win.W[N]);
      const auto t = window_residual_coeff(win.R, win.W, N, win.xstar, P);
      const double scale = win.xstar * win.xstar * csum * csum;
      CHECK(std::abs(t[0]) < 1e-11 * scale);
      CHECK(std::abs(t[1]) < 1e-11 * scale);
    }
  }
}

TEST_CASE("window radius fit is sane and guards evaluation") {
  const ModelParams P = ModelParams::make(1e-2);
  const SonicWindow win = sonic_window(2.5, P, 40);
  CHECK(win.radius > 0.05);
  CHECK(win.radius < 5.0);
  CHECK(win.delta_h <= 0.05);
  CHECK(win.delta_h > 1e-3);
  CHECK(win.fitR.r2 > 0.8);
  CHECK(win.fitW.r2 > 0.8);
  CHECK_THROWS_AS((void)eval_expansion(win, win.xstar * (1 + 2 * win.delta_h)),
                  OutOfRadius);
  const auto v = eval_expansion(win, win.xstar);
  CHECK(v[0] == doctest::Approx(win.point.W0));
  CHECK(v[1] == doctest::Approx(win.point.W0));
}

TEST_CASE("expansion agrees with direct integration across the window halves") {
  const ModelParams P = ModelParams::make(1e-2);
  const SonicWindow win = sonic_window(2.5, P, 40);
  auto f = [&](double x, const Vec<2>& y) {
    const auto d = rhs_radial({x, y[0], y[1]}, P);
    return Vec<2>{d[0], d[1]};
  };
  OdeOptions opts;
  opts.rtol = 1e-12;
  opts.atol = 1e-14;
  for (double side : {+1.0, -1.0}) {
    const double xa = win.xstar * (1 + side * 0.5 * win.delta_h);
    const double xb = win.xstar * (1 + side * win.delta_h);
    const auto ya = eval_expansion(win, xa);
    const auto res = integrate<2>(f, xa, Vec<2>{ya[0], ya[1]}, xb, opts);
    REQUIRE(res.reason == OdeStop::ReachedEnd);
    const auto yb = eval_expansion(win, xb);
    CHECK(std::abs(res.y[0] - yb[0]) < 1e-8);
    CHECK(std::abs(res.y[1] - yb[1]) < 1e-8);
  }
}

TEST_CASE("center expansion matches closed-form low orders") {
  const double eps = 1e-2, R0 = 2.0;
  const ModelParams P = ModelParams::make(eps);
  const OriginExpansion oe = origin_expand(R0, P, 20);
  CHECK(oe.W[0] == doctest::Approx(1.0 / 3.0));
  CHECK(oe.R[1] == 0.0);
  CHECK(oe.W[1] == 0.0);
  const double eta = P.eta;
  const double R2 = -(1 - eps) * std::pow(R0, eta) * R0 * (1.0 / 3 + eps) * (R0 - 1.0 / 3);
  const double W2 =
      0.4 * (1 + eps) * std::pow(R0, eta) * (1.0 / 3) * (1.0 / 3 + eps) * (R0 - 1.0 / 3);
  CHECK(oe.R[2] == doctest::Approx(R2).epsilon(1e-12));
  CHECK(oe.W[2] == doctest::Approx(W2).epsilon(1e-12));
  // odd orders vanish
  for (int n = 3; n < 20; n += 2) {
    CHECK(std::abs(oe.R[n]) < 1e-10);
    CHECK(std::abs(oe.W[n]) < 1e-10);
  }
}

TEST_CASE("center recursion factors have the predicted form") {
  const double eps = 1e-2, R0 = 1.7;
  const ModelParams P = ModelParams::make(eps);
  const OriginExpansion oe = origin_expand(R0, P, 16);
  const double B0 = std::pow(R0, -P.eta);
  for (int N : {3, 6, 11}) {
    Series R = oe.R, W = oe.W;
    const auto s0 = origin_residual_coeff(R, W, N, N + 1, P);
    R[N + 1] += 1;
    const auto s1 = origin_residual_coeff(R, W, N, N + 1, P);
    CHECK(s1[0] - s0[0] == doctest::Approx(B0 * (N + 1)).epsilon(1e-10));
    R[N + 1] -= 1;
    W[N + 1] += 1;
    const auto s2 = origin_residual_coeff(R, W, N, N + 1, P);
    CHECK(s2[1] - s0[1] == doctest::Approx(B0 * (N + 4)).epsilon(1e-10));
  }
}

TEST_CASE("center expansion agrees with direct integration") {
  const ModelParams P = ModelParams::make(1e-2);
  const OriginExpansion oe = origin_expand(1.5, P, 40);
  auto f = [&](double x, const Vec<2>& y) {
    const auto d = rhs_radial({x, y[0], y[1]}, P);
    return Vec<2>{d[0], d[1]};
  };
  OdeOptions opts;
  opts.rtol = 1e-12;
  opts.atol = 1e-15;
  const double xa = 5e-3, xb = 4e-2;
  const auto ya = oe.eval(xa);
  Trajectory<2> traj;
  const auto res = integrate<2>(f, xa, Vec<2>{ya[0], ya[1]}, xb, opts, {}, &traj);
  REQUIRE(res.reason == OdeStop::ReachedEnd);
  for (double x = xa; x <= xb * (1 + 1e-12); x += (xb - xa) / 16) {
    const auto ye = oe.eval(x);
    const auto yi = traj.eval(x);
    CHECK(std::abs(ye[0] - yi[0]) < 1e-9);
    CHECK(std::abs(ye[1] - yi[1]) < 1e-9);
  }
}

TEST_CASE("window construction is deterministic") {
  const ModelParams P = ModelParams::make(1e-3);
  const SonicWindow a = sonic_window(2.7, P, 40);
  const SonicWindow b = sonic_window(2.7, P, 40);
  REQUIRE(a.R.size() == b.R.size());
  CHECK(std::memcmp(a.R.data(), b.R.data(), a.R.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.W.data(), b.W.data(), a.W.size() * sizeof(double)) == 0);
}
