#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dwiz/nn.hpp"
#include "dwiz/rng.hpp"
#include "dwiz/tags.hpp"
#include "dwiz/vocabulary.hpp"

namespace dwiz {

struct ModelDims {
  std::size_t embedding_dim = 50;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = kNumTags;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Default utterance length in tokens.
inline constexpr std::size_t kDefaultMaxLen = 25;

namespace param_names {
inline const std::string kEmbedding = "embedding.weight";
inline const std::string kEncoderInput = "encoder.input_weights";
inline const std::string kEncoderRecurrent = "encoder.recurrent_weights";
inline const std::string kEncoderBias = "encoder.bias";
inline const std::string kContextInput = "context.input_weights";
inline const std::string kContextRecurrent = "context.recurrent_weights";
inline const std::string kContextBias = "context.bias";
inline const std::string kOutputWeight = "output.weight";
inline const std::string kOutputBias = "output.bias";
}  // namespace param_names

/// Parameters of the utterance-level classifier: word embeddings feeding an
/// LSTM whose last hidden state goes through a softmax output layer.
template <typename T>
struct NoContextNet {
  nn::EmbeddingTable<T> embedding;
  nn::LstmParams<T> encoder;
  nn::DenseParams<T> output;

  static NoContextNet zeros(std::size_t vocab_size, const ModelDims& dims) {
    return {{Tensor<T>({vocab_size, dims.embedding_dim})},
            nn::LstmParams<T>::zeros(dims.embedding_dim, dims.hidden_dim),
            nn::DenseParams<T>::zeros(dims.hidden_dim, dims.num_classes)};
  }

  nn::ParameterRefs<T> parameters() {
    using namespace param_names;
    return {{kEmbedding, &embedding.weights},       {kEncoderInput, &encoder.input_weights},
            {kEncoderRecurrent, &encoder.recurrent_weights}, {kEncoderBias, &encoder.bias},
            {kOutputWeight, &output.weight},        {kOutputBias, &output.bias}};
  }

  nn::ConstParameterRefs<T> parameters() const {
    nn::ConstParameterRefs<T> out;
    for (auto& [name, t] : const_cast<NoContextNet*>(this)->parameters()) out.emplace_back(name, t);
    return out;
  }

  void validate() const {
    encoder.validate();
    output.validate();
    if (embedding.weights.rank() != 2 || embedding.dim() != encoder.input_dim() ||
        encoder.hidden() != output.input_dim()) {
      throw ShapeError("no-context model dimension chain broken: embedding " + embedding.weights.shape_string() +
                       ", encoder input " + std::to_string(encoder.input_dim()) + ", output input " +
                       std::to_string(output.input_dim()));
    }
  }

  template <typename U>
  NoContextNet<U> cast() const {
    return {{embedding.weights.template cast<U>()}, encoder.template cast<U>(), output.template cast<U>()};
  }
};

/// Parameters of the second level: an LSTM over utterance representations
/// and its own softmax output layer.
template <typename T>
struct ContextNet {
  nn::LstmParams<T> context;
  nn::DenseParams<T> output;

  static ContextNet zeros(std::size_t representation_dim, const ModelDims& dims) {
    return {nn::LstmParams<T>::zeros(representation_dim, dims.hidden_dim),
            nn::DenseParams<T>::zeros(dims.hidden_dim, dims.num_classes)};
  }

  nn::ParameterRefs<T> parameters() {
    using namespace param_names;
    return {{kContextInput, &context.input_weights},
            {kContextRecurrent, &context.recurrent_weights},
            {kContextBias, &context.bias},
            {kOutputWeight, &output.weight},
            {kOutputBias, &output.bias}};
  }

  nn::ConstParameterRefs<T> parameters() const {
    nn::ConstParameterRefs<T> out;
    for (auto& [name, t] : const_cast<ContextNet*>(this)->parameters()) out.emplace_back(name, t);
    return out;
  }

  void validate() const {
    context.validate();
    output.validate();
    if (context.hidden() != output.input_dim()) throw ShapeError("context model dimension chain broken");
  }

  template <typename U>
  ContextNet<U> cast() const {
    return {context.template cast<U>(), output.template cast<U>()};
  }
};

// ---------------------------------------------------------------------------
// Initialization: Glorot-uniform weights, zero biases with forget-gate bias
// 1.0, embeddings uniform in [-0.05, 0.05] with the PAD row zeroed.

template <typename T>
void glorot_uniform(Tensor<T>& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
  for (T& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
void initialize_lstm(nn::LstmParams<T>& p, Rng& rng) {
  glorot_uniform(p.input_weights, rng);
  glorot_uniform(p.recurrent_weights, rng);
  p.bias.fill(T(0));
  const std::size_t hid = p.hidden();
  for (std::size_t k = 0; k < hid; ++k) p.bias[nn::kForgetGate * hid + k] = T(1);
}

template <typename T>
void initialize(NoContextNet<T>& net, Rng& rng) {
  for (T& v : net.embedding.weights.values()) v = static_cast<T>(rng.uniform(-0.05, 0.05));
  net.embedding.zero_pad_row();
  initialize_lstm(net.encoder, rng);
  glorot_uniform(net.output.weight, rng);
  net.output.bias.fill(T(0));
}

template <typename T>
void initialize(ContextNet<T>& net, Rng& rng) {
  initialize_lstm(net.context, rng);
  glorot_uniform(net.output.weight, rng);
  net.output.bias.fill(T(0));
}

// ---------------------------------------------------------------------------
// Forward / backward passes for single examples.

/// Last hidden state of the utterance encoder (the utterance representation).
template <typename T>
std::vector<T> utterance_representation(const NoContextNet<T>& net, std::span<const TokenId> ids) {
  return nn::lstm_last_hidden(nn::embed(net.embedding, ids), net.encoder);
}

template <typename T>
std::vector<T> predict_no_context(const NoContextNet<T>& net, std::span<const TokenId> ids) {
  const auto h = utterance_representation(net, ids);
  return nn::dense_softmax<T>(h, net.output);
}

/// Backpropagates dLoss/d(representation) into the encoder and embedding
/// gradients held in `g` (keys of NoContextNet::parameters()).
template <typename T>
void encoder_backward(const NoContextNet<T>& net, std::span<const TokenId> ids, const nn::LstmSequenceCache<T>& cache,
                      std::span<const T> d_rep, nn::GradientStore<T>& g) {
  using namespace param_names;
  const Tensor<T> d_embedded = nn::lstm_backward<T>(
      cache, net.encoder, d_rep, {g[kEncoderInput], g[kEncoderRecurrent], g[kEncoderBias]});
  nn::embed_backward<T>(ids, d_embedded, g[kEmbedding]);
}

/// Cross-entropy loss of one utterance; gradients are added into `g`.
template <typename T>
T no_context_loss_and_grad(const NoContextNet<T>& net, std::span<const TokenId> ids, int target,
                           nn::GradientStore<T>& g, std::vector<T>* probs_out = nullptr) {
  using namespace param_names;
  const Tensor<T> embedded = nn::embed(net.embedding, ids);
  const auto fwd = nn::lstm_forward(embedded, net.encoder);
  const auto probs = nn::dense_softmax<T>(fwd.last_hidden, net.output);
  const T loss = nn::cross_entropy<T>(probs, target);
  const auto d_logits = nn::softmax_cross_entropy_grad<T>(probs, target);
  const auto d_rep =
      nn::dense_backward<T>(fwd.last_hidden, d_logits, net.output, {g[kOutputWeight], g[kOutputBias]});
  encoder_backward<T>(net, ids, fwd.cache, d_rep, g);
  if (probs_out) *probs_out = probs;
  return loss;
}

/// `reps` holds one utterance representation per row, oldest first.
template <typename T>
std::vector<T> predict_context(const ContextNet<T>& net, const Tensor<T>& reps) {
  const auto h = nn::lstm_last_hidden(reps, net.context);
  return nn::dense_softmax<T>(h, net.output);
}

/// Loss of one context window; gradients of the context parameters go into
/// `g`. When `d_reps` is given it receives dLoss/d(representations).
template <typename T>
T context_loss_and_grad(const ContextNet<T>& net, const Tensor<T>& reps, int target, nn::GradientStore<T>& g,
                        Tensor<T>* d_reps = nullptr, std::vector<T>* probs_out = nullptr) {
  using namespace param_names;
  const auto fwd = nn::lstm_forward(reps, net.context);
  const auto probs = nn::dense_softmax<T>(fwd.last_hidden, net.output);
  const T loss = nn::cross_entropy<T>(probs, target);
  const auto d_logits = nn::softmax_cross_entropy_grad<T>(probs, target);
  const auto d_h =
      nn::dense_backward<T>(fwd.last_hidden, d_logits, net.output, {g[kOutputWeight], g[kOutputBias]});
  Tensor<T> d_in =
      nn::lstm_backward<T>(fwd.cache, net.context, d_h, {g[kContextInput], g[kContextRecurrent], g[kContextBias]});
  if (d_reps) *d_reps = std::move(d_in);
  if (probs_out) *probs_out = probs;
  return loss;
}

/// Encodes every utterance of `window` with the encoder and stacks the
/// representations row by row.
template <typename T>
Tensor<T> encode_window(const NoContextNet<T>& encoder, const std::vector<std::vector<TokenId>>& window) {
  if (window.empty()) throw InvalidArgument("context window is empty");
  const std::size_t hid = encoder.encoder.hidden();
  Tensor<T> reps({window.size(), hid});
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto h = utterance_representation(encoder, window[i]);
    std::copy(h.begin(), h.end(), reps.row(i).begin());
  }
  return reps;
}

/// Full two-level loss. Context gradients go into `context_grads`; when
/// `encoder_grads` is non-null the loss is also backpropagated through the
/// encoder (used to verify the hierarchy end to end; training keeps the
/// encoder frozen and passes nullptr).
template <typename T>
T hierarchical_loss_and_grad(const NoContextNet<T>& encoder, const ContextNet<T>& context,
                             const std::vector<std::vector<TokenId>>& window, int target,
                             nn::GradientStore<T>& context_grads, nn::GradientStore<T>* encoder_grads) {
  if (window.empty()) throw InvalidArgument("context window is empty");
  const std::size_t hid = encoder.encoder.hidden();
  Tensor<T> reps({window.size(), hid});
  std::vector<nn::LstmSequenceCache<T>> caches;
  caches.reserve(window.size());
  for (std::size_t i = 0; i < window.size(); ++i) {
    auto fwd = nn::lstm_forward(nn::embed(encoder.embedding, window[i]), encoder.encoder);
    std::copy(fwd.last_hidden.begin(), fwd.last_hidden.end(), reps.row(i).begin());
    caches.push_back(std::move(fwd.cache));
  }
  Tensor<T> d_reps;
  const T loss = context_loss_and_grad(context, reps, target, context_grads, &d_reps);
  if (encoder_grads) {
    for (std::size_t i = 0; i < window.size(); ++i) {
      encoder_backward<T>(encoder, window[i], caches[i], d_reps.row(i), *encoder_grads);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Deployable models (32-bit).

/// CRC32 over the little-endian bytes of every tensor, in parameter order.
std::uint32_t parameter_checksum(const nn::ConstParameterRefs<float>& params);

class NoContextModel {
 public:
  NoContextModel(Vocabulary vocab, std::size_t max_len, NoContextNet<float> net,
                 std::vector<std::string> tags, std::string id);

  static NoContextModel initialize(Vocabulary vocab, std::size_t max_len, const ModelDims& dims,
                                   std::uint64_t seed, std::string id = "no-context");

  const std::string& id() const noexcept { return id_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  std::size_t max_len() const noexcept { return max_len_; }
  ModelDims dims() const;
  const std::vector<std::string>& tags() const noexcept { return tags_; }
  const NoContextNet<float>& net() const noexcept { return net_; }
  NoContextNet<float>& mutable_net() noexcept { return net_; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  std::vector<float> representation(std::span<const TokenId> ids) const;
  std::vector<float> predict(std::span<const TokenId> ids) const;

  std::uint32_t checksum() const { return parameter_checksum(net_.parameters()); }

 private:
  void check_ids(std::span<const TokenId> ids) const;

  Vocabulary vocab_;
  std::size_t max_len_;
  NoContextNet<float> net_;
  std::vector<std::string> tags_;
  std::string id_;
};

/// Context-based model. The utterance encoder is shared and never modified.
class ContextModel {
 public:
  ContextModel(std::shared_ptr<const NoContextModel> encoder, ContextNet<float> net, std::size_t context_size,
               std::string id);

  static ContextModel initialize(std::shared_ptr<const NoContextModel> encoder, std::size_t context_size,
                                 std::uint64_t seed, std::string id = "context");

  const std::string& id() const noexcept { return id_; }
  std::size_t context_size() const noexcept { return context_size_; }
  const NoContextModel& encoder() const noexcept { return *encoder_; }
  const std::shared_ptr<const NoContextModel>& encoder_ptr() const noexcept { return encoder_; }
  const ContextNet<float>& net() const noexcept { return net_; }
  ContextNet<float>& mutable_net() noexcept { return net_; }

  /// `window` holds exactly context_size + 1 encoded utterances, oldest
  /// first, the last one being the utterance to classify.
  std::vector<float> predict(const std::vector<std::vector<TokenId>>& window) const;

  /// Same as predict() but on precomputed representations ([rows x hidden]).
  std::vector<float> predict_from_representations(const Tensor<float>& reps) const;

  std::uint32_t checksum() const { return parameter_checksum(net_.parameters()); }

 private:
  std::shared_ptr<const NoContextModel> encoder_;
  ContextNet<float> net_;
  std::size_t context_size_;
  std::string id_;
};

}  // namespace dwiz
