#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dwiz/nn.hpp"

namespace dwiz::nn {

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 0.0;
  bool passed = false;

  double max_relative_error() const;
};

struct GradcheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-4;
  /// Lower bound on the error denominator max(|analytic|, |numeric|), so
  /// entries whose true gradient is (near) zero are compared absolutely.
  double denominator_floor = 1e-6;
};

/// Relative error |a - n| / max(|a|, |n|, floor); 0 when both are zero.
double relative_error(double analytic, double numeric, double floor);

/// Compares `analytic()` against central differences of `loss()` for every
/// entry of every tensor in `params`. Evaluation happens in double precision;
/// parameters are restored after each perturbation.
GradcheckReport gradcheck(const ParameterRefs<double>& params, const std::function<double()>& loss,
                          const std::function<GradientStore<double>()>& analytic,
                          const GradcheckOptions& options = {});

}  // namespace dwiz::nn
