#include "dwiz/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <set>
#include <sstream>

#include "dwiz/optimizer.hpp"
#include "dwiz/rng.hpp"
#include "dwiz/vocabulary.hpp"

namespace dwiz {
namespace {

struct LoopOutcome {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double initial_loss = 0.0;
  double first_epoch_final_loss = 0.0;
};

// Mini-batch Adam with global-norm clipping and early stopping on
// `validate()`. `example_loss(i, grads)` adds example i's gradient into
// grads and returns its loss. The best epoch's parameters are restored.
template <typename ExampleLoss, typename Validate, typename AfterStep>
LoopOutcome run_training(const nn::ParameterRefs<float>& params, std::size_t n_examples, const TrainConfig& cfg,
                         ExampleLoss&& example_loss, Validate&& validate, AfterStep&& after_step,
                         const TrainingHooks& hooks) {
  if (n_examples == 0) throw InvalidArgument("training set has no usable examples");

  nn::ConstParameterRefs<float> view;
  for (const auto& [name, t] : params) view.emplace_back(name, t);
  auto grads = nn::GradientStore<float>::zeros_like(view);
  nn::AdamState<float> adam;
  const nn::AdamConfig adam_cfg{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};

  Rng rng(cfg.seed + 1);
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  LoopOutcome out;
  double best_accuracy = -1.0;
  std::vector<Tensor<float>> best_params;

  const std::size_t batches = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t tail_batches = std::max<std::size_t>(1, batches / 10);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    double tail_loss = 0.0;
    std::size_t tail_count = 0;

    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n_examples, begin + cfg.batch_size);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) batch_loss += static_cast<double>(example_loss(order[i], grads));
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + " of " + std::to_string(batches));
      }
      const double count = static_cast<double>(end - begin);
      grads.scale(static_cast<float>(1.0 / count));
      grads.clip_by_global_norm(cfg.clip_norm);
      nn::adam_step(params, grads, adam, adam_cfg);
      after_step();

      const double mean = batch_loss / count;
      epoch_loss += batch_loss;
      if (epoch == 1 && b == 0) out.initial_loss = mean;
      if (epoch == 1 && b + tail_batches >= batches) {
        tail_loss += batch_loss;
        tail_count += end - begin;
      }
    }
    if (epoch == 1) out.first_epoch_final_loss = tail_loss / static_cast<double>(tail_count);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(n_examples);
    rec.validation_accuracy = validate();
    rec.improved = rec.validation_accuracy > best_accuracy;
    if (rec.improved) {
      best_accuracy = rec.validation_accuracy;
      out.best_epoch = epoch;
      best_params.clear();
      for (const auto& [name, t] : params) best_params.push_back(*t);
    }
    out.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (epoch - out.best_epoch >= cfg.patience) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = std::move(best_params[i]);
  return out;
}

// Context-model predictions over conversations whose representations are
// already computed.
EvalReport evaluate_context_reps(const ContextNet<float>& net, std::size_t n, BoundaryPolicy policy,
                                 const std::vector<Conversation>& conversations,
                                 const std::vector<Tensor<float>>& reps, std::string split) {
  std::vector<int> gold, predicted;
  std::size_t skipped = 0;
  for (std::size_t c = 0; c < conversations.size(); ++c) {
    const auto& conv = conversations[c];
    for (std::size_t pos = 0; pos < conv.utterances.size(); ++pos) {
      auto window = context_window(reps[c], pos, n, policy);
      if (!window) {
        ++skipped;
        continue;
      }
      const auto probs = predict_context(net, *window);
      gold.push_back(conv.utterances[pos].tag);
      predicted.push_back(argmax(probs));
    }
  }
  return make_report(std::move(split), gold, predicted, skipped, net.output.classes());
}

std::vector<Tensor<float>> all_representations(const NoContextModel& encoder,
                                               const std::vector<Conversation>& conversations) {
  std::vector<Tensor<float>> reps;
  reps.reserve(conversations.size());
  for (const auto& c : conversations) reps.push_back(conversation_representations(encoder, c));
  return reps;
}

template <typename T>
void assign(nlohmann::json::const_iterator it, T& field) {
  field = it->get<T>();
}

}  // namespace

std::string to_string(BoundaryPolicy policy) { return policy == BoundaryPolicy::Skip ? "skip" : "pad"; }

BoundaryPolicy parse_boundary_policy(std::string_view text) {
  if (text == "skip") return BoundaryPolicy::Skip;
  if (text == "pad") return BoundaryPolicy::Pad;
  throw InvalidArgument("unknown context boundary policy '" + std::string(text) + "' (expected skip or pad)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (max_epochs == 0) throw InvalidArgument("max_epochs must be positive");
  if (patience == 0) throw InvalidArgument("patience must be positive");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be non-negative");
  if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
  if (min_count < 1) throw InvalidArgument("min_count must be >= 1");
  if (max_len == 0) throw InvalidArgument("max_len must be positive");
  if (dims.embedding_dim == 0 || dims.hidden_dim == 0 || dims.num_classes == 0) {
    throw InvalidArgument("model dimensions must be positive");
  }
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"clip_norm", clip_norm},
          {"seed", seed},
          {"context_size", context_size},
          {"boundary_policy", to_string(boundary_policy)},
          {"min_count", min_count},
          {"max_len", max_len},
          {"embedding_dim", dims.embedding_dim},
          {"hidden_dim", dims.hidden_dim}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("training config must be a JSON object");
  TrainConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "batch_size") assign(it, c.batch_size);
      else if (key == "max_epochs") assign(it, c.max_epochs);
      else if (key == "patience") assign(it, c.patience);
      else if (key == "learning_rate") assign(it, c.learning_rate);
      else if (key == "beta1") assign(it, c.beta1);
      else if (key == "beta2") assign(it, c.beta2);
      else if (key == "epsilon") assign(it, c.epsilon);
      else if (key == "clip_norm") assign(it, c.clip_norm);
      else if (key == "seed") assign(it, c.seed);
      else if (key == "context_size") assign(it, c.context_size);
      else if (key == "boundary_policy") c.boundary_policy = parse_boundary_policy(it->get<std::string>());
      else if (key == "min_count") assign(it, c.min_count);
      else if (key == "max_len") assign(it, c.max_len);
      else if (key == "embedding_dim") assign(it, c.dims.embedding_dim);
      else if (key == "hidden_dim") assign(it, c.dims.hidden_dim);
      else throw InvalidArgument("unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad training config value: ") + e.what());
  }
  c.validate();
  return c;
}

int argmax(std::span<const float> values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

EvalReport make_report(std::string split, const std::vector<int>& gold, const std::vector<int>& predicted,
                       std::size_t skipped, std::size_t num_classes) {
  if (gold.size() != predicted.size()) throw InvalidArgument("gold and predicted label counts differ");
  EvalReport r;
  r.split = std::move(split);
  r.utterances_evaluated = gold.size();
  r.utterances_skipped = skipped;
  r.per_tag.assign(num_classes, {});
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = static_cast<std::size_t>(gold[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (g >= num_classes || p >= num_classes) throw InvalidArgument("label outside the tag set");
    ++r.confusion[g][p];
    ++r.per_tag[g].support;
    ++r.per_tag[p].predicted;
    if (g == p) {
      ++r.per_tag[g].correct;
      ++r.correct;
    }
  }
  for (auto& m : r.per_tag) {
    m.precision = m.predicted ? static_cast<double>(m.correct) / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.support ? static_cast<double>(m.correct) / static_cast<double>(m.support) : 0.0;
  }
  r.accuracy = r.utterances_evaluated
                   ? static_cast<double>(r.correct) / static_cast<double>(r.utterances_evaluated)
                   : 0.0;
  return r;
}

EvalReport evaluate(const NoContextModel& model, const std::vector<Conversation>& conversations, std::string split) {
  std::vector<int> gold, predicted;
  for (const auto& conv : conversations) {
    for (const auto& u : conv.utterances) {
      gold.push_back(u.tag);
      predicted.push_back(argmax(model.predict(model.encode(u.tokens))));
    }
  }
  return make_report(std::move(split), gold, predicted, 0, model.tags().size());
}

EvalReport evaluate(const ContextModel& model, const std::vector<Conversation>& conversations,
                    BoundaryPolicy policy, std::string split) {
  const auto reps = all_representations(model.encoder(), conversations);
  return evaluate_context_reps(model.net(), model.context_size(), policy, conversations, reps, std::move(split));
}

EvalReport evaluate_constant(int tag, const std::vector<Conversation>& conversations, std::string split) {
  std::vector<int> gold;
  for (const auto& conv : conversations) {
    for (const auto& u : conv.utterances) gold.push_back(u.tag);
  }
  std::vector<int> predicted(gold.size(), tag);
  return make_report(std::move(split), gold, predicted, 0, TagSet::swda().size());
}

Tensor<float> conversation_representations(const NoContextModel& encoder, const Conversation& conversation) {
  const std::size_t hid = encoder.dims().hidden_dim;
  Tensor<float> reps({conversation.utterances.size(), hid});
  for (std::size_t i = 0; i < conversation.utterances.size(); ++i) {
    const auto h = encoder.representation(encoder.encode(conversation.utterances[i].tokens));
    std::copy(h.begin(), h.end(), reps.row(i).begin());
  }
  return reps;
}

std::optional<Tensor<float>> context_window(const Tensor<float>& representations, std::size_t position,
                                            std::size_t n, BoundaryPolicy policy) {
  if (position >= representations.dim(0)) throw InvalidArgument("context_window: position out of range");
  if (position < n && policy == BoundaryPolicy::Skip) return std::nullopt;
  const std::size_t hid = representations.dim(1);
  Tensor<float> window({n + 1, hid});
  for (std::size_t slot = 0; slot <= n; ++slot) {
    // slot n is the current utterance; slot n - k is k utterances back
    const std::size_t back = n - slot;
    if (back > position) continue;  // zero padding
    const auto src = representations.row(position - back);
    std::copy(src.begin(), src.end(), window.row(slot).begin());
  }
  return window;
}

NoContextTrainResult train_no_context(const CorpusSplit& split, const TrainConfig& config,
                                      const TrainingHooks& hooks) {
  config.validate();
  Vocabulary vocab = build_vocabulary(split.train, config.min_count);
  auto model = std::make_shared<NoContextModel>(
      NoContextModel::initialize(std::move(vocab), config.max_len, config.dims, config.seed, "no-context"));

  std::vector<std::vector<TokenId>> inputs;
  std::vector<int> targets;
  for (const auto& conv : split.train) {
    for (const auto& u : conv.utterances) {
      inputs.push_back(model->encode(u.tokens));
      targets.push_back(u.tag);
    }
  }

  const auto& monitor = split.validation.empty() ? split.train : split.validation;
  NoContextNet<float>& net = model->mutable_net();
  const auto params = net.parameters();

  LoopOutcome loop = run_training(
      params, inputs.size(), config,
      [&](std::size_t i, nn::GradientStore<float>& g) {
        return no_context_loss_and_grad<float>(net, inputs[i], targets[i], g);
      },
      [&] { return evaluate(*model, monitor, "validation").accuracy; }, [&] { net.embedding.zero_pad_row(); },
      hooks);

  NoContextTrainResult result;
  result.history = std::move(loop.history);
  result.best_epoch = loop.best_epoch;
  result.initial_loss = loop.initial_loss;
  result.first_epoch_final_loss = loop.first_epoch_final_loss;
  result.validation = evaluate(*model, monitor, "validation");
  result.test = evaluate(*model, split.test, "test");
  result.model = std::move(model);
  return result;
}

ContextTrainResult train_context(const CorpusSplit& split, std::shared_ptr<const NoContextModel> encoder,
                                 const TrainConfig& config, const TrainingHooks& hooks) {
  config.validate();
  if (!encoder) throw InvalidArgument("context training needs a trained encoder");
  if (config.context_size < 1) throw InvalidArgument("context size n must be >= 1");

  ContextTrainResult result;
  result.encoder_checksum_before = encoder->checksum();

  const std::size_t n = config.context_size;
  auto model = std::make_shared<ContextModel>(
      ContextModel::initialize(encoder, n, config.seed, "context-n" + std::to_string(n)));

  const auto train_reps = all_representations(*encoder, split.train);
  struct Example {
    std::size_t conversation;
    std::size_t position;
  };
  std::vector<Example> examples;
  for (std::size_t c = 0; c < split.train.size(); ++c) {
    for (std::size_t pos = 0; pos < split.train[c].utterances.size(); ++pos) {
      if (pos < n && config.boundary_policy == BoundaryPolicy::Skip) continue;
      examples.push_back({c, pos});
    }
  }

  const auto& monitor = split.validation.empty() ? split.train : split.validation;
  const auto monitor_reps = split.validation.empty() ? train_reps : all_representations(*encoder, split.validation);

  ContextNet<float>& net = model->mutable_net();
  const auto params = net.parameters();
  const BoundaryPolicy policy = config.boundary_policy;

  LoopOutcome loop = run_training(
      params, examples.size(), config,
      [&](std::size_t i, nn::GradientStore<float>& g) {
        const Example& ex = examples[i];
        const auto window = context_window(train_reps[ex.conversation], ex.position, n, policy);
        return context_loss_and_grad<float>(net, *window, split.train[ex.conversation].utterances[ex.position].tag,
                                            g);
      },
      [&] { return evaluate_context_reps(net, n, policy, monitor, monitor_reps, "validation").accuracy; }, [] {},
      hooks);

  result.history = std::move(loop.history);
  result.best_epoch = loop.best_epoch;
  result.initial_loss = loop.initial_loss;
  result.first_epoch_final_loss = loop.first_epoch_final_loss;
  result.validation = evaluate_context_reps(net, n, policy, monitor, monitor_reps, "validation");
  result.test = evaluate(*model, split.test, policy, "test");
  result.encoder_checksum_after = encoder->checksum();
  result.model = std::move(model);
  return result;
}

std::vector<SweepRow> context_sweep(const CorpusSplit& split, std::shared_ptr<const NoContextModel> encoder,
                                    const std::vector<std::size_t>& context_sizes, const TrainConfig& config,
                                    bool parallel) {
  if (context_sizes.empty()) throw InvalidArgument("context sweep needs at least one n");
  auto run = [&](std::size_t n) {
    TrainConfig cfg = config;
    cfg.context_size = n;
    auto trained = train_context(split, encoder, cfg);
    SweepRow row;
    row.context_size = n;
    row.accuracy = trained.test.accuracy;
    row.test = std::move(trained.test);
    row.model = std::move(trained.model);
    return row;
  };

  std::vector<SweepRow> rows;
  if (parallel) {
    std::vector<std::future<SweepRow>> futures;
    for (std::size_t n : context_sizes) futures.push_back(std::async(std::launch::async, run, n));
    for (auto& f : futures) rows.push_back(f.get());
  } else {
    for (std::size_t n : context_sizes) rows.push_back(run(n));
  }
  return rows;
}

nlohmann::ordered_json to_json(const EvalReport& report, const std::vector<std::string>& tag_names) {
  nlohmann::ordered_json j;
  j["split"] = report.split;
  j["accuracy"] = report.accuracy;
  j["correct"] = report.correct;
  j["utterances_evaluated"] = report.utterances_evaluated;
  j["utterances_skipped"] = report.utterances_skipped;
  nlohmann::ordered_json per_tag = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < report.per_tag.size(); ++i) {
    const auto& m = report.per_tag[i];
    const std::string name = i < tag_names.size() ? tag_names[i] : std::to_string(i);
    per_tag[name] = {{"support", m.support},
                     {"predicted", m.predicted},
                     {"correct", m.correct},
                     {"precision", m.precision},
                     {"recall", m.recall}};
  }
  j["per_tag"] = per_tag;
  j["confusion"] = report.confusion;
  return j;
}

std::string render_results_table(const ResultsTable& table) {
  std::ostringstream out;
  auto line = [&](const std::string& label, double accuracy) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-36s %7.2f\n", label.c_str(), accuracy * 100.0);
    out << buf;
  };
  char header[96];
  std::snprintf(header, sizeof header, "%-36s %7s\n", "Model setup", "Acc.(%)");
  out << header << std::string(44, '-') << '\n';
  if (table.most_common_class) line("Most common class", *table.most_common_class);
  if (table.no_context) line("Non-utterance-context model", *table.no_context);
  for (const auto& [n, acc] : table.context) {
    line("Context-based model (n=" + std::to_string(n) + (n == 1 ? " utt.)" : " utts.)"), acc);
  }
  return out.str();
}

nlohmann::ordered_json to_json(const ResultsTable& table) {
  nlohmann::ordered_json j;
  auto optional_value = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["most_common_class"] = optional_value(table.most_common_class);
  j["no_context"] = optional_value(table.no_context);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [n, acc] : table.context) rows.push_back({{"context_size", n}, {"accuracy", acc}});
  j["context"] = rows;
  return j;
}

}  // namespace dwiz
