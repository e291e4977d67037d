#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "dwiz/error.hpp"
#include "dwiz/nn.hpp"

namespace dwiz::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Throws NumericError on a non-finite gradient before touching anything.
/// With lr == 0 the parameters are left bit-identical.
template <typename T>
void adam_step(const ParameterRefs<T>& params, const GradientStore<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  ConstParameterRefs<T> view;
  view.reserve(params.size());
  for (const auto& [name, t] : params) view.emplace_back(name, t);
  grads.check_matches(view);
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T one_minus_b1 = static_cast<T>(1.0 - cfg.beta1);
  const T one_minus_b2 = static_cast<T>(1.0 - cfg.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);

  for (const auto& [name, param] : params) {
    const Tensor<T>& g = grads.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, Tensor<T>(param->shape()));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, Tensor<T>(param->shape()));
    T* m = m_it->second.data();
    T* v = v_it->second.data();
    T* p = param->data();
    const T* gd = g.data();
    const std::size_t n = param->size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + one_minus_b1 * gd[i];
      v[i] = b2 * v[i] + one_minus_b2 * gd[i] * gd[i];
    }
    if (lr == T(0)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const T m_hat = m[i] * inv_bc1;
      const T v_hat = v[i] * inv_bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace dwiz::nn
