#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "rlp/fit.hpp"
#include "rlp/ode.hpp"
#include "rlp/parallel.hpp"
#include "rlp/roots.hpp"
#include "rlp/series.hpp"

using namespace rlp;

TEST_CASE("brent and safeguarded newton") {
  const double r = brent([](double x) { return std::cos(x) - x; }, 0.0, 1.0, 1e-15);
  CHECK(std::abs(std::cos(r) - r) < 1e-14);
  const double c = newton_safe(
      [](double x) { return std::pair<double, double>{x * x * x - 2.0, 3 * x * x}; },
      1.0, 0.0, 2.0, 1e-15);
  CHECK(std::abs(c - std::cbrt(2.0)) < 1e-12);
  CHECK_THROWS_AS(brent([](double x) { return 1.0 + x * x; }, -1.0, 1.0, 1e-12),
                  BracketLost);
}

TEST_CASE("dopri5 accuracy, dense output and events") {
  // harmonic oscillator y'' = -y, y = (cos t, -sin t)
  auto f = [](double, const Vec<2>& y) { return Vec<2>{y[1], -y[0]}; };
  OdeOptions opts;
  opts.rtol = 1e-12;
  opts.atol = 1e-14;
  Trajectory<2> traj;
  auto res = integrate<2>(f, 0.0, {1.0, 0.0}, 10.0, opts, {}, &traj);
  CHECK(res.reason == OdeStop::ReachedEnd);
  CHECK(std::abs(res.y[0] - std::cos(10.0)) < 1e-10);
  // dense output sampled off the step endpoints
  for (double t = 0.05; t < 10.0; t += 0.477) {
    const auto y = traj.eval(t);
    CHECK(std::abs(y[0] - std::cos(t)) < 1e-9);
    const auto d = traj.eval_deriv(t);
    CHECK(std::abs(d[0] + std::sin(t)) < 1e-7);
  }
  // event: first zero of y0 at t = pi/2
  Event<2> ev;
  ev.g = [](double, const Vec<2>& y) { return y[0]; };
  ev.direction = -1;
  auto res2 = integrate<2>(f, 0.0, {1.0, 0.0}, 10.0, opts, {ev});
  CHECK(res2.reason == OdeStop::Event);
  CHECK(std::abs(res2.t - M_PI / 2) < 1e-11);
  // backward integration
  auto res3 = integrate<2>(f, 10.0, res.y, 0.0, opts);
  CHECK(std::abs(res3.y[0] - 1.0) < 1e-9);
  CHECK(std::abs(res3.y[1]) < 1e-9);
}

TEST_CASE("dopri5 rejects trial stages that leave the domain") {
  // rhs throws DomainError beyond y = 3; event stops just before
  auto f = [](double, const Vec<1>& y) {
    if (y[0] > 3.0) throw DomainError("test");
    return Vec<1>{y[0]};
  };
  Event<1> ev;
  ev.g = [](double, const Vec<1>& y) { return y[0] - 2.9; };
  ev.direction = +1;
  auto res = integrate<1>(f, 0.0, {1.0}, 10.0, {}, {ev});
  CHECK(res.reason == OdeStop::Event);
  CHECK(std::abs(res.y[0] - 2.9) < 1e-8);
}

TEST_CASE("series arithmetic and power recurrence") {
  // (1+z)^a against binomial coefficients
  const double a = -0.37;
  Series base{1.0, 1.0};
  Series p = series_pow(base, a, 12);
  double binom = 1.0;
  for (int n = 0; n <= 12; ++n) {
    if (n > 0) binom *= (a - (n - 1)) / n;
    CHECK(std::abs(p[n] - binom) < 1e-14 * (1 + std::abs(binom)));
  }
  // product consistency: (s^a) * (s^-a) = 1
  Series s{2.0, -0.3, 0.11, 0.05, -0.02};
  Series q = series_mul(series_pow(s, a, 8), series_pow(s, -a, 8), 8);
  CHECK(std::abs(q[0] - 1.0) < 1e-14);
  for (int n = 1; n <= 8; ++n) CHECK(std::abs(q[n]) < 1e-13);
  // Horner evaluation
  Series c{1.0, 2.0, 3.0};
  CHECK(series_eval(c, 0.5) == doctest::Approx(1 + 1 + 0.75).epsilon(1e-15));
  CHECK(series_eval_deriv(c, 0.5) == doctest::Approx(2 + 3).epsilon(1e-15));
}

TEST_CASE("radius fit recovers synthetic growth model") {
  const double C = 2.4, alpha = 1.5;
  Series c(41, 0.0);
  for (int n = 1; n <= 40; ++n)
    c[n] = std::pow(C, n - alpha) / (double(n) * n * n) * ((n % 2) ? 1 : -1);
  const RadiusFit rf = fit_radius(c, 21, 40);
  CHECK(rf.radius == doctest::Approx(1.0 / C).epsilon(1e-10));
  CHECK(rf.alpha == doctest::Approx(alpha).epsilon(1e-8));
  CHECK(rf.r2 > 0.999999);
}

TEST_CASE("line and quadratic fits") {
  std::vector<double> xs, ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(0.1 * i);
    ys.push_back(3.0 - 0.7 * (0.1 * i));
  }
  const LineFit lf = fit_line(xs, ys);
  CHECK(lf.slope == doctest::Approx(-0.7).epsilon(1e-12));
  CHECK(lf.intercept == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(lf.r2 == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> us, vs;
  for (int i = 0; i < 9; ++i) {
    us.push_back(-1.0 + 0.25 * i);
    vs.push_back(2.0 + 0.5 * us.back() - 1.25 * us.back() * us.back());
  }
  const auto q = fit_quad(us, vs);
  CHECK(q[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(-1.25).epsilon(1e-12));

  // root of parabola through three points: y = (x-2)(x+1)
  auto yf = [](double x) { return (x - 2) * (x + 1); };
  const double root = quad_root_3pt(1.0, yf(1.0), 1.5, yf(1.5), 3.0, yf(3.0));
  CHECK(root == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("parallel_for matches serial bitwise") {
  const std::size_t n = 4096;
  std::vector<double> a(n), b(n);
  auto body = [](std::size_t i) {
    double acc = 0;
    for (int k = 1; k <= 32; ++k) acc += std::sin(1e-3 * i * k);
    return acc;
  };
  parallel_for(n, [&](std::size_t i) { a[i] = body(i); });
  setenv("RLP_SERIAL", "1", 1);
  parallel_for(n, [&](std::size_t i) { b[i] = body(i); });
  unsetenv("RLP_SERIAL");
  CHECK(std::memcmp(a.data(), b.data(), n * sizeof(double)) == 0);
}
