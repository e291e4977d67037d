#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwiz/corpus.hpp"
#include "dwiz/models.hpp"

namespace dwiz {

/// What to do with utterances that have fewer than n predecessors in their
/// conversation: leave them out (and count them as skipped), or fill the
/// missing window slots with zero representations.
enum class BoundaryPolicy { Skip, Pad };

std::string to_string(BoundaryPolicy policy);
BoundaryPolicy parse_boundary_policy(std::string_view text);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double clip_norm = 5.0;
  std::uint64_t seed = 1234;
  std::size_t context_size = 2;
  BoundaryPolicy boundary_policy = BoundaryPolicy::Skip;
  int min_count = 2;
  std::size_t max_len = kDefaultMaxLen;
  ModelDims dims;

  /// Throws InvalidArgument on non-positive sizes or rates.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
  bool improved = false;
};

struct TagMetrics {
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // predicted count
  std::size_t correct = 0;
  double precision = 0.0;
  double recall = 0.0;

  friend bool operator==(const TagMetrics&, const TagMetrics&) = default;
};

struct EvalReport {
  std::string split;
  std::size_t utterances_evaluated = 0;
  std::size_t utterances_skipped = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<TagMetrics> per_tag;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const float> values);

EvalReport make_report(std::string split, const std::vector<int>& gold, const std::vector<int>& predicted,
                       std::size_t skipped, std::size_t num_classes);

EvalReport evaluate(const NoContextModel& model, const std::vector<Conversation>& conversations,
                    std::string split = "test");
EvalReport evaluate(const ContextModel& model, const std::vector<Conversation>& conversations,
                    BoundaryPolicy policy = BoundaryPolicy::Skip, std::string split = "test");
/// Scores a predictor that always answers `tag`.
EvalReport evaluate_constant(int tag, const std::vector<Conversation>& conversations, std::string split = "test");

/// Representations of every utterance of `conversation`, one row each.
Tensor<float> conversation_representations(const NoContextModel& encoder, const Conversation& conversation);

/// Window rows for utterance `position`: representations of positions
/// position-n .. position. Returns nullopt when the window would cross the
/// conversation start under the Skip policy; under Pad the missing rows
/// are zero.
std::optional<Tensor<float>> context_window(const Tensor<float>& representations, std::size_t position,
                                            std::size_t n, BoundaryPolicy policy);

struct TrainingHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

struct NoContextTrainResult {
  std::shared_ptr<NoContextModel> model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double initial_loss = 0.0;            // mean loss of the first batch before any update
  double first_epoch_final_loss = 0.0;  // mean loss over the last tenth of epoch 1's batches
  EvalReport validation;
  EvalReport test;
};

struct ContextTrainResult {
  std::shared_ptr<ContextModel> model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double initial_loss = 0.0;
  double first_epoch_final_loss = 0.0;
  EvalReport validation;
  EvalReport test;
  std::uint32_t encoder_checksum_before = 0;
  std::uint32_t encoder_checksum_after = 0;
};

/// Trains the utterance classifier. The vocabulary is built from
/// `split.train`. Early stopping tracks validation accuracy (training
/// accuracy when the validation split is empty) and the best epoch's
/// parameters are returned.
NoContextTrainResult train_no_context(const CorpusSplit& split, const TrainConfig& config,
                                      const TrainingHooks& hooks = {});

/// Trains the context-level LSTM and output layer on top of a frozen encoder.
ContextTrainResult train_context(const CorpusSplit& split, std::shared_ptr<const NoContextModel> encoder,
                                 const TrainConfig& config, const TrainingHooks& hooks = {});

struct SweepRow {
  std::size_t context_size = 0;
  double accuracy = 0.0;
  EvalReport test;
  std::shared_ptr<ContextModel> model;
};

/// One context model per n, sharing the frozen encoder. With `parallel` the
/// runs execute concurrently; results do not depend on it.
std::vector<SweepRow> context_sweep(const CorpusSplit& split, std::shared_ptr<const NoContextModel> encoder,
                                    const std::vector<std::size_t>& context_sizes, const TrainConfig& config,
                                    bool parallel = true);

nlohmann::ordered_json to_json(const EvalReport& report, const std::vector<std::string>& tag_names);

/// Accuracy rows in the layout of the usual results table.
struct ResultsTable {
  std::optional<double> most_common_class;
  std::optional<double> no_context;
  std::vector<std::pair<std::size_t, double>> context;  // (n, accuracy)
};

std::string render_results_table(const ResultsTable& table);
nlohmann::ordered_json to_json(const ResultsTable& table);

}  // namespace dwiz
