#pragma once

// Toy-scale gradient checks shared by the unit tests and the acceptance run.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dwiz/gradcheck.hpp"
#include "dwiz/models.hpp"

namespace dwiz::testing {

/// Flips the sign of one analytic gradient tensor.
struct Corruption {
  std::string parameter;  // empty means no corruption
};

inline const ModelDims kToyDims{4, 3, 4};  // embedding 4, hidden 3, 4 classes
inline constexpr std::size_t kToyVocab = 7;  // PAD, UNK and 5 tokens

inline void flip_sign(nn::GradientStore<double>& g, const std::string& name) {
  for (double& v : g[name].values()) v = -v;
}

template <typename T>
void randomize_biases(T& net, Rng& rng) {
  for (auto& [name, t] : net.parameters()) {
    if (name.find("bias") == std::string::npos) continue;
    for (double& v : t->values()) v += rng.uniform(-0.3, 0.3);
  }
}

inline nn::GradcheckReport gradcheck_no_context(std::uint64_t seed, const Corruption& corruption = {},
                                                const nn::GradcheckOptions& options = {}) {
  auto net = NoContextNet<double>::zeros(kToyVocab, kToyDims);
  Rng rng(seed);
  initialize(net, rng);
  randomize_biases(net, rng);
  const std::vector<TokenId> ids{0, 2, 5, 3, 6, 1};  // one PAD, then five tokens
  const int target = 2;

  auto loss = [&] {
    return nn::cross_entropy<double>(predict_no_context(net, std::span<const TokenId>(ids)), target);
  };
  auto analytic = [&] {
    auto g = nn::GradientStore<double>::zeros_like(std::as_const(net).parameters());
    no_context_loss_and_grad<double>(net, ids, target, g);
    if (!corruption.parameter.empty()) flip_sign(g, corruption.parameter);
    return g;
  };
  return nn::gradcheck(net.parameters(), loss, analytic, options);
}

/// Context level only, on fixed utterance representations.
inline nn::GradcheckReport gradcheck_context(std::uint64_t seed, const Corruption& corruption = {},
                                             const nn::GradcheckOptions& options = {}) {
  auto net = ContextNet<double>::zeros(kToyDims.hidden_dim, kToyDims);
  Rng rng(seed);
  initialize(net, rng);
  randomize_biases(net, rng);
  Tensor<double> reps({3, kToyDims.hidden_dim});
  for (double& v : reps.values()) v = rng.uniform(-0.9, 0.9);
  const int target = 1;

  auto loss = [&] { return nn::cross_entropy<double>(predict_context(net, reps), target); };
  auto analytic = [&] {
    auto g = nn::GradientStore<double>::zeros_like(std::as_const(net).parameters());
    context_loss_and_grad<double>(net, reps, target, g);
    if (!corruption.parameter.empty()) flip_sign(g, corruption.parameter);
    return g;
  };
  return nn::gradcheck(net.parameters(), loss, analytic, options);
}

/// Both levels end to end: gradients flow through the context LSTM into
/// the encoder and embeddings. Parameters of the two nets are checked in
/// one pass under prefixed names.
inline nn::GradcheckReport gradcheck_hierarchical(std::uint64_t seed, const Corruption& corruption = {},
                                                  const nn::GradcheckOptions& options = {}) {
  auto encoder = NoContextNet<double>::zeros(kToyVocab, kToyDims);
  auto context = ContextNet<double>::zeros(kToyDims.hidden_dim, kToyDims);
  Rng rng(seed);
  initialize(encoder, rng);
  initialize(context, rng);
  randomize_biases(encoder, rng);
  randomize_biases(context, rng);
  const std::vector<std::vector<TokenId>> window{{0, 0, 2, 4}, {3, 5, 6, 2}, {0, 1, 4, 3}};
  const int target = 3;

  nn::ParameterRefs<double> params;
  for (auto& [name, t] : encoder.parameters()) params.emplace_back("encoder/" + name, t);
  for (auto& [name, t] : context.parameters()) params.emplace_back("context/" + name, t);

  auto loss = [&] {
    return nn::cross_entropy<double>(predict_context(context, encode_window(encoder, window)), target);
  };
  auto analytic = [&] {
    auto ge = nn::GradientStore<double>::zeros_like(std::as_const(encoder).parameters());
    auto gc = nn::GradientStore<double>::zeros_like(std::as_const(context).parameters());
    hierarchical_loss_and_grad<double>(encoder, context, window, target, gc, &ge);
    nn::ConstParameterRefs<double> view;
    for (const auto& [name, t] : params) view.emplace_back(name, t);
    auto g = nn::GradientStore<double>::zeros_like(view);
    for (const auto& [name, t] : encoder.parameters()) g["encoder/" + name] = ge.at(name);
    for (const auto& [name, t] : context.parameters()) g["context/" + name] = gc.at(name);
    if (!corruption.parameter.empty()) flip_sign(g, corruption.parameter);
    return g;
  };
  return nn::gradcheck(params, loss, analytic, options);
}

}  // namespace dwiz::testing
