#pragma once

// Minimal recurrent-network engine: embedding lookup, LSTM cell with
// backpropagation through time, dense + softmax output, cross-entropy.
// Everything is templated on the scalar so the same code runs in float for
// training and in double for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dwiz/error.hpp"
#include "dwiz/tensor.hpp"
#include "dwiz/vocabulary.hpp"

namespace dwiz::nn {

template <typename T>
using ParameterRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
using ConstParameterRefs = std::vector<std::pair<std::string, const Tensor<T>*>>;

/// Gradients keyed by parameter name, one tensor per trainable parameter
/// with the parameter's shape.
template <typename T>
class GradientStore {
 public:
  GradientStore() = default;

  static GradientStore zeros_like(const ConstParameterRefs<T>& params) {
    GradientStore g;
    for (const auto& [name, tensor] : params) g.grads_.emplace(name, Tensor<T>(tensor->shape()));
    return g;
  }

  Tensor<T>& operator[](const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ShapeError("no gradient slot for parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ShapeError("no gradient slot for parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }

  auto begin() { return grads_.begin(); }
  auto end() { return grads_.end(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

  void zero() {
    for (auto& [name, g] : grads_) g.fill(T(0));
  }

  void scale(T factor) {
    for (auto& [name, g] : grads_) {
      for (T& v : g.values()) v *= factor;
    }
  }

  double global_norm() const {
    double sum = 0.0;
    for (const auto& [name, g] : grads_) {
      for (T v : g.values()) sum += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sum);
  }

  /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_by_global_norm(double max_norm) {
    const double norm = global_norm();
    if (norm > max_norm && norm > 0.0) scale(static_cast<T>(max_norm / norm));
    return norm;
  }

  bool all_finite() const {
    for (const auto& [name, g] : grads_) {
      if (!g.all_finite()) return false;
    }
    return true;
  }

  /// Throws ShapeError unless the keys and shapes match `params` exactly.
  void check_matches(const ConstParameterRefs<T>& params) const {
    if (params.size() != grads_.size()) throw ShapeError("gradient store does not match parameter set");
    for (const auto& [name, tensor] : params) {
      if (!at(name).same_shape(*tensor)) {
        throw ShapeError("gradient shape mismatch for '" + name + "'");
      }
    }
  }

 private:
  std::map<std::string, Tensor<T>> grads_;
};

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// ---------------------------------------------------------------------------
// Embedding

template <typename T>
struct EmbeddingTable {
  Tensor<T> weights;  // [vocab_size x dim]; row 0 (PAD) is pinned to zero

  std::size_t vocab_size() const { return weights.dim(0); }
  std::size_t dim() const { return weights.dim(1); }

  void zero_pad_row() {
    for (T& v : weights.row(Vocabulary::kPad)) v = T(0);
  }
};

template <typename T>
Tensor<T> embed(const EmbeddingTable<T>& table, std::span<const TokenId> ids) {
  const std::size_t dim = table.dim();
  Tensor<T> out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= table.vocab_size()) {
      throw ShapeError("embedding id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(table.vocab_size()));
    }
    if (id == Vocabulary::kPad) continue;
    std::copy_n(table.weights.row(static_cast<std::size_t>(id)).data(), dim, out.row(i).data());
  }
  return out;
}

/// Scatters row gradients into `d_weights`. PAD never receives gradient.
template <typename T>
void embed_backward(std::span<const TokenId> ids, const Tensor<T>& d_out, Tensor<T>& d_weights) {
  const std::size_t dim = d_weights.dim(1);
  if (d_out.rank() != 2 || d_out.dim(0) != ids.size() || d_out.dim(1) != dim) {
    throw ShapeError("embed_backward: gradient shape " + d_out.shape_string() + " does not match ids");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == Vocabulary::kPad) continue;
    T* dst = d_weights.row(static_cast<std::size_t>(ids[i])).data();
    const T* src = d_out.row(i).data();
    for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k];
  }
}

// ---------------------------------------------------------------------------
// LSTM
//
// Pre-activations z = x . W_x + h_prev . W_h + b, laid out as four blocks
// of `hidden` values in the order (input, forget, cell-candidate, output).

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };
inline constexpr std::size_t kNumGates = 4;

template <typename T>
struct LstmParams {
  Tensor<T> input_weights;      // [input_dim x 4*hidden]
  Tensor<T> recurrent_weights;  // [hidden x 4*hidden]
  Tensor<T> bias;               // [4*hidden]

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden) {
    return {Tensor<T>({input_dim, kNumGates * hidden}), Tensor<T>({hidden, kNumGates * hidden}),
            Tensor<T>({kNumGates * hidden})};
  }

  std::size_t input_dim() const { return input_weights.dim(0); }
  std::size_t hidden() const { return recurrent_weights.dim(0); }

  void validate() const {
    const std::size_t h = recurrent_weights.rank() == 2 ? recurrent_weights.dim(0) : 0;
    if (h == 0 || input_weights.rank() != 2 || input_weights.dim(1) != kNumGates * h ||
        recurrent_weights.dim(1) != kNumGates * h || bias.rank() != 1 || bias.dim(0) != kNumGates * h) {
      throw ShapeError("inconsistent LSTM parameter shapes: W_x " + input_weights.shape_string() + ", W_h " +
                       recurrent_weights.shape_string() + ", b " + bias.shape_string());
    }
  }

  template <typename U>
  LstmParams<U> cast() const {
    return {input_weights.template cast<U>(), recurrent_weights.template cast<U>(), bias.template cast<U>()};
  }
};

template <typename T>
struct LstmGradRefs {
  Tensor<T>& input_weights;
  Tensor<T>& recurrent_weights;
  Tensor<T>& bias;
};

template <typename T>
struct LstmStepCache {
  std::vector<T> x;
  std::vector<T> h_prev;
  std::vector<T> c_prev;
  std::vector<T> gates;  // post-activation values, [4*hidden]
  std::vector<T> c;
  std::vector<T> tanh_c;
};

template <typename T>
struct LstmStepResult {
  std::vector<T> h;
  std::vector<T> c;
  LstmStepCache<T> cache;
};

namespace detail {

// z = b + x . W_x + h . W_h, accumulated in that order.
template <typename T>
void lstm_preactivations(const T* x, const T* h_prev, const LstmParams<T>& p, T* z) {
  const std::size_t in = p.input_dim();
  const std::size_t hid = p.hidden();
  const std::size_t width = kNumGates * hid;
  const T* b = p.bias.data();
  for (std::size_t j = 0; j < width; ++j) z[j] = b[j];
  const T* wx = p.input_weights.data();
  for (std::size_t k = 0; k < in; ++k) {
    const T xk = x[k];
    if (xk == T(0)) continue;
    const T* row = wx + k * width;
    for (std::size_t j = 0; j < width; ++j) z[j] += xk * row[j];
  }
  const T* wh = p.recurrent_weights.data();
  for (std::size_t k = 0; k < hid; ++k) {
    const T hk = h_prev[k];
    if (hk == T(0)) continue;
    const T* row = wh + k * width;
    for (std::size_t j = 0; j < width; ++j) z[j] += hk * row[j];
  }
}

// Applies gate nonlinearities in place and advances (h, c).
template <typename T>
void lstm_cell_update(T* gates, const T* c_prev, std::size_t hid, T* c, T* tanh_c, T* h) {
  T* i = gates + kInputGate * hid;
  T* f = gates + kForgetGate * hid;
  T* g = gates + kCellGate * hid;
  T* o = gates + kOutputGate * hid;
  for (std::size_t k = 0; k < hid; ++k) {
    i[k] = sigmoid(i[k]);
    f[k] = sigmoid(f[k]);
    g[k] = std::tanh(g[k]);
    o[k] = sigmoid(o[k]);
    c[k] = f[k] * c_prev[k] + i[k] * g[k];
    tanh_c[k] = std::tanh(c[k]);
    h[k] = o[k] * tanh_c[k];
  }
}

}  // namespace detail

template <typename T>
LstmStepResult<T> lstm_step(std::span<const T> x, std::span<const T> h_prev, std::span<const T> c_prev,
                            const LstmParams<T>& p) {
  p.validate();
  const std::size_t hid = p.hidden();
  if (x.size() != p.input_dim() || h_prev.size() != hid || c_prev.size() != hid) {
    throw ShapeError("lstm_step: input sizes (" + std::to_string(x.size()) + ", " + std::to_string(h_prev.size()) +
                     ", " + std::to_string(c_prev.size()) + ") do not match parameters (" +
                     std::to_string(p.input_dim()) + ", " + std::to_string(hid) + ")");
  }
  LstmStepResult<T> r;
  r.cache.x.assign(x.begin(), x.end());
  r.cache.h_prev.assign(h_prev.begin(), h_prev.end());
  r.cache.c_prev.assign(c_prev.begin(), c_prev.end());
  r.cache.gates.resize(kNumGates * hid);
  r.cache.c.resize(hid);
  r.cache.tanh_c.resize(hid);
  r.h.resize(hid);
  detail::lstm_preactivations(x.data(), h_prev.data(), p, r.cache.gates.data());
  detail::lstm_cell_update(r.cache.gates.data(), c_prev.data(), hid, r.cache.c.data(), r.cache.tanh_c.data(),
                           r.h.data());
  r.c = r.cache.c;
  return r;
}

template <typename T>
struct LstmSequenceCache {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<LstmStepCache<T>> steps;
};

template <typename T>
struct LstmForwardResult {
  std::vector<T> last_hidden;
  LstmSequenceCache<T> cache;
};

/// Runs the LSTM from a zero state over the rows of `seq` ([len x input_dim])
/// and returns the final hidden state plus per-step caches.
template <typename T>
LstmForwardResult<T> lstm_forward(const Tensor<T>& seq, const LstmParams<T>& p) {
  p.validate();
  if (seq.rank() != 2 || seq.dim(0) == 0) throw ShapeError("lstm_forward: empty sequence");
  if (seq.dim(1) != p.input_dim()) {
    throw ShapeError("lstm_forward: input width " + std::to_string(seq.dim(1)) + " != " +
                     std::to_string(p.input_dim()));
  }
  const std::size_t hid = p.hidden();
  LstmForwardResult<T> r;
  r.cache.input_dim = p.input_dim();
  r.cache.hidden = hid;
  r.cache.steps.resize(seq.dim(0));
  std::vector<T> h(hid, T(0));
  std::vector<T> c(hid, T(0));
  for (std::size_t t = 0; t < seq.dim(0); ++t) {
    auto& s = r.cache.steps[t];
    const auto x = seq.row(t);
    s.x.assign(x.begin(), x.end());
    s.h_prev = h;
    s.c_prev = c;
    s.gates.resize(kNumGates * hid);
    s.c.resize(hid);
    s.tanh_c.resize(hid);
    detail::lstm_preactivations(s.x.data(), s.h_prev.data(), p, s.gates.data());
    detail::lstm_cell_update(s.gates.data(), s.c_prev.data(), hid, s.c.data(), s.tanh_c.data(), h.data());
    c = s.c;
  }
  r.last_hidden = std::move(h);
  return r;
}

/// Forward pass without caches, for inference.
template <typename T>
std::vector<T> lstm_last_hidden(const Tensor<T>& seq, const LstmParams<T>& p) {
  p.validate();
  if (seq.rank() != 2 || seq.dim(0) == 0) throw ShapeError("lstm_forward: empty sequence");
  if (seq.dim(1) != p.input_dim()) throw ShapeError("lstm_forward: input width mismatch");
  const std::size_t hid = p.hidden();
  std::vector<T> h(hid, T(0)), c(hid, T(0)), c_next(hid), tanh_c(hid), gates(kNumGates * hid);
  for (std::size_t t = 0; t < seq.dim(0); ++t) {
    detail::lstm_preactivations(seq.row(t).data(), h.data(), p, gates.data());
    detail::lstm_cell_update(gates.data(), c.data(), hid, c_next.data(), tanh_c.data(), h.data());
    std::swap(c, c_next);
  }
  return h;
}

/// Backpropagation through time. `d_last_hidden` is dLoss/dh at the final
/// step. Parameter gradients are accumulated into `grads`; the returned
/// tensor holds dLoss/dx for every step ([len x input_dim]).
template <typename T>
Tensor<T> lstm_backward(const LstmSequenceCache<T>& cache, const LstmParams<T>& p,
                        std::span<const T> d_last_hidden, LstmGradRefs<T> grads) {
  p.validate();
  const std::size_t in = p.input_dim();
  const std::size_t hid = p.hidden();
  const std::size_t width = kNumGates * hid;
  if (cache.input_dim != in || cache.hidden != hid || cache.steps.empty()) {
    throw ShapeError("lstm_backward: cache does not belong to these parameters");
  }
  if (d_last_hidden.size() != hid) throw ShapeError("lstm_backward: upstream gradient has wrong size");
  if (!grads.input_weights.same_shape(p.input_weights) || !grads.recurrent_weights.same_shape(p.recurrent_weights) ||
      !grads.bias.same_shape(p.bias)) {
    throw ShapeError("lstm_backward: gradient buffers do not match parameter shapes");
  }

  const std::size_t len = cache.steps.size();
  Tensor<T> d_inputs({len, in});
  std::vector<T> dh(d_last_hidden.begin(), d_last_hidden.end());
  std::vector<T> dc(hid, T(0));
  std::vector<T> dz(width);
  std::vector<T> dh_prev(hid);

  const T* wx = p.input_weights.data();
  const T* wh = p.recurrent_weights.data();
  T* gwx = grads.input_weights.data();
  T* gwh = grads.recurrent_weights.data();
  T* gb = grads.bias.data();

  for (std::size_t step = len; step-- > 0;) {
    const auto& s = cache.steps[step];
    if (s.x.size() != in || s.gates.size() != width) throw ShapeError("lstm_backward: stale cache entry");
    const T* i = s.gates.data() + kInputGate * hid;
    const T* f = s.gates.data() + kForgetGate * hid;
    const T* g = s.gates.data() + kCellGate * hid;
    const T* o = s.gates.data() + kOutputGate * hid;
    for (std::size_t k = 0; k < hid; ++k) {
      const T d_o = dh[k] * s.tanh_c[k];
      const T d_c = dc[k] + dh[k] * o[k] * (T(1) - s.tanh_c[k] * s.tanh_c[k]);
      const T d_i = d_c * g[k];
      const T d_g = d_c * i[k];
      const T d_f = d_c * s.c_prev[k];
      dc[k] = d_c * f[k];
      dz[kInputGate * hid + k] = d_i * i[k] * (T(1) - i[k]);
      dz[kForgetGate * hid + k] = d_f * f[k] * (T(1) - f[k]);
      dz[kCellGate * hid + k] = d_g * (T(1) - g[k] * g[k]);
      dz[kOutputGate * hid + k] = d_o * o[k] * (T(1) - o[k]);
    }

    for (std::size_t j = 0; j < width; ++j) gb[j] += dz[j];
    T* dx = d_inputs.row(step).data();
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = s.x[k];
      const T* wrow = wx + k * width;
      T* grow = gwx + k * width;
      T acc = T(0);
      for (std::size_t j = 0; j < width; ++j) {
        grow[j] += xk * dz[j];
        acc += wrow[j] * dz[j];
      }
      dx[k] = acc;
    }
    for (std::size_t k = 0; k < hid; ++k) {
      const T hk = s.h_prev[k];
      const T* wrow = wh + k * width;
      T* grow = gwh + k * width;
      T acc = T(0);
      for (std::size_t j = 0; j < width; ++j) {
        grow[j] += hk * dz[j];
        acc += wrow[j] * dz[j];
      }
      dh_prev[k] = acc;
    }
    std::swap(dh, dh_prev);
  }
  return d_inputs;
}

// ---------------------------------------------------------------------------
// Output layer

template <typename T>
struct DenseParams {
  Tensor<T> weight;  // [input_dim x classes]
  Tensor<T> bias;    // [classes]

  static DenseParams zeros(std::size_t input_dim, std::size_t classes) {
    return {Tensor<T>({input_dim, classes}), Tensor<T>({classes})};
  }

  std::size_t input_dim() const { return weight.dim(0); }
  std::size_t classes() const { return weight.dim(1); }

  void validate() const {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
      throw ShapeError("inconsistent dense parameter shapes: W " + weight.shape_string() + ", b " +
                       bias.shape_string());
    }
  }

  template <typename U>
  DenseParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>()};
  }
};

template <typename T>
struct DenseGradRefs {
  Tensor<T>& weight;
  Tensor<T>& bias;
};

template <typename T>
std::vector<T> dense_logits(std::span<const T> h, const DenseParams<T>& p) {
  p.validate();
  if (h.size() != p.input_dim()) {
    throw ShapeError("dense: input size " + std::to_string(h.size()) + " != " + std::to_string(p.input_dim()));
  }
  const std::size_t classes = p.classes();
  std::vector<T> z(p.bias.values().begin(), p.bias.values().end());
  const T* w = p.weight.data();
  for (std::size_t k = 0; k < h.size(); ++k) {
    const T hk = h[k];
    const T* row = w + k * classes;
    for (std::size_t j = 0; j < classes; ++j) z[j] += hk * row[j];
  }
  return z;
}

/// Numerically stable softmax (max subtracted before exponentiation).
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const T max = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T sum = T(0);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - max);
    sum += p[j];
  }
  for (T& v : p) v /= sum;
  return p;
}

template <typename T>
std::vector<T> dense_softmax(std::span<const T> h, const DenseParams<T>& p) {
  const auto z = dense_logits(h, p);
  return softmax<T>(z);
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln(probs[target]), with the probability clamped at 1e-12.
template <typename T>
T cross_entropy(std::span<const T> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
    throw InvalidArgument("cross_entropy: target " + std::to_string(target) + " out of range");
  }
  const T p = std::max(probs[static_cast<std::size_t>(target)], static_cast<T>(kProbabilityFloor));
  return -std::log(p);
}

/// dLoss/dlogits for softmax followed by cross-entropy.
template <typename T>
std::vector<T> softmax_cross_entropy_grad(std::span<const T> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
    throw InvalidArgument("cross_entropy: target out of range");
  }
  std::vector<T> d(probs.begin(), probs.end());
  d[static_cast<std::size_t>(target)] -= T(1);
  return d;
}

/// Accumulates dense parameter gradients and returns dLoss/dh.
template <typename T>
std::vector<T> dense_backward(std::span<const T> h, std::span<const T> d_logits, const DenseParams<T>& p,
                              DenseGradRefs<T> grads) {
  p.validate();
  const std::size_t classes = p.classes();
  if (h.size() != p.input_dim() || d_logits.size() != classes) throw ShapeError("dense_backward: size mismatch");
  if (!grads.weight.same_shape(p.weight) || !grads.bias.same_shape(p.bias)) {
    throw ShapeError("dense_backward: gradient buffers do not match parameter shapes");
  }
  std::vector<T> dh(h.size(), T(0));
  const T* w = p.weight.data();
  T* gw = grads.weight.data();
  T* gb = grads.bias.data();
  for (std::size_t j = 0; j < classes; ++j) gb[j] += d_logits[j];
  for (std::size_t k = 0; k < h.size(); ++k) {
    const T hk = h[k];
    const T* row = w + k * classes;
    T* grow = gw + k * classes;
    T acc = T(0);
    for (std::size_t j = 0; j < classes; ++j) {
      grow[j] += hk * d_logits[j];
      acc += row[j] * d_logits[j];
    }
    dh[k] = acc;
  }
  return dh;
}

}  // namespace dwiz::nn
