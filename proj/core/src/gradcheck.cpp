#include "dwiz/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dwiz::nn {

double GradcheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradcheckReport gradcheck(const ParameterRefs<double>& params, const std::function<double()>& loss,
                          const std::function<GradientStore<double>()>& analytic,
                          const GradcheckOptions& options) {
  const GradientStore<double> grads = analytic();
  GradcheckReport report;
  report.tolerance = options.tolerance;
  report.passed = true;

  for (const auto& [name, tensor] : params) {
    const Tensor<double>& g = grads.at(name);
    GradcheckEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      double& value = (*tensor)[i];
      const double saved = value;
      value = saved + options.epsilon;
      const double plus = loss();
      value = saved - options.epsilon;
      const double minus = loss();
      value = saved;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double err = relative_error(g[i], numeric, options.denominator_floor);
      if (i == 0 || err > entry.max_relative_error) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.analytic = g[i];
        entry.numeric = numeric;
      }
    }
    if (!(entry.max_relative_error < options.tolerance)) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dwiz::nn
