#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "rlp/shooter.hpp"

using namespace rlp;

TEST_CASE("shooting tunes the sonic location to machine precision") {
  for (double eps : {1e-4, 1e-3}) {
    CAPTURE(eps);
    const ModelParams P = ModelParams::make(eps);
    const ShootOutcome out = shoot(P);
    CHECK(out.bracket <= 1e-10);
    CHECK(out.xstar > 2.2);
    CHECK(out.xstar < 2.8);
    CHECK(out.n_scan_valid >= 8);
    CHECK(std::abs(out.W_cut - 1.0 / 3.0) <= 1e-6);
    CHECK(out.D_cut > 1.0 / 3.0);
    CHECK(out.match_err <= 1e-6);
    CHECK(out.exponent == doctest::Approx(2.0).epsilon(0.05));
    CHECK(out.R0_origin > 1.0 / 3.0);
  }
}

TEST_CASE("sonic location moves little over a decade of sound speed") {
  const ShootOutcome a = shoot(ModelParams::make(1e-4));
  const ShootOutcome b = shoot(ModelParams::make(1e-3));
  CHECK(std::abs(a.xstar - b.xstar) < 0.05);
}

TEST_CASE("trial classification flips across the tuned location") {
  const ModelParams P = ModelParams::make(1e-3);
  const ShootOutcome out = shoot(P);
  ShooterConfig cfg;
  const ShotProbe lo = classify(out.xstar - 0.05, P, cfg);
  const ShotProbe hi = classify(out.xstar + 0.05, P, cfg);
  CHECK(lo.cls != ShotClass::Invalid);
  CHECK(hi.cls != ShotClass::Invalid);
  CHECK(lo.cls != hi.cls);
  // off-tune trials stop well before the cut
  CHECK(lo.x_stop > 10 * cfg.x_cut);
  CHECK(hi.x_stop > 10 * cfg.x_cut);
}

TEST_CASE("shooting is deterministic and serial-equivalent") {
  const ModelParams P = ModelParams::make(1e-3);
  const ShootOutcome a = shoot(P);
  setenv("RLP_SERIAL", "1", 1);
  const ShootOutcome b = shoot(P);
  unsetenv("RLP_SERIAL");
  CHECK(a.xstar == b.xstar);
  CHECK(a.W_cut == b.W_cut);
  CHECK(a.R0_origin == b.R0_origin);
}
