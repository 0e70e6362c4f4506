#pragma once
#include <cmath>

#include "rlp/errors.hpp"

namespace rlp {

// Fluid/gauge constants for one value of the sound-speed-squared parameter.
// eta = 2*eps/(1-eps) is the exponent appearing in the pressure-density
// closure; kplus/kminus are the two characteristic slopes of the transport
// system, roots of k^2 - 2k + 1/(1+eta)^2 = 0.
struct ModelParams {
  double epsilon = 0;
  double eta = 0;
  double one_plus_eta = 1;  // (1+eps)/(1-eps)
  double kplus = 1, kminus = 1;

  double tol_ode = 1e-10;
  double tol_root = 1e-12;
  double tol_identity = 1e-10;

  static ModelParams make(double eps) {
    // eps == 0 is admitted here for limit checks; the CLI separately enforces
    // its own (0, 0.05] policy.
    if (!(eps >= 0.0) || eps >= 0.5)
      throw DomainError("epsilon must lie in [0, 0.5)");
    ModelParams p;
    p.epsilon = eps;
    p.eta = 2.0 * eps / (1.0 - eps);
    p.one_plus_eta = (1.0 + eps) / (1.0 - eps);
    const double s = std::sqrt(p.eta * (2.0 + p.eta));
    p.kplus = 1.0 + s / (1.0 + p.eta);
    p.kminus = 1.0 - s / (1.0 + p.eta);
    return p;
  }
};

}  // namespace rlp
