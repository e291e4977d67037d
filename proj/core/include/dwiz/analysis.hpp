#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwiz/corpus.hpp"
#include "dwiz/error.hpp"
#include "dwiz/models.hpp"

namespace dwiz {

inline constexpr std::string_view kApiVersion = "1";
inline constexpr std::string_view kNotEnoughContext = "NotEnoughContext";
inline constexpr std::size_t kDefaultTopK = 3;

struct AnalysisRequest {
  std::vector<std::string> utterances;  // raw lines, speakers alternate
  std::size_t top_k = kDefaultTopK;
};

struct TagConfidence {
  int tag = 0;
  float confidence = 0.0f;

  friend bool operator==(const TagConfidence&, const TagConfidence&) = default;
};

struct UtteranceResult {
  std::size_t index = 0;  // 1-based, after blank lines are dropped
  std::string text;       // the line as given
  Speaker speaker = Speaker::A;
  std::vector<TagConfidence> no_context;
  std::optional<std::vector<TagConfidence>> context;  // nullopt means NotEnoughContext
  std::size_t oov_token_count = 0;

  friend bool operator==(const UtteranceResult&, const UtteranceResult&) = default;
};

struct ModelMetadata {
  std::string no_context_model_id;
  std::string context_model_id;
  std::size_t context_size = 0;
  std::string version;

  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

struct AnalysisResult {
  std::vector<UtteranceResult> results;
  std::vector<std::size_t> summary;  // count per tag index
  ModelMetadata model_metadata;

  friend bool operator==(const AnalysisResult&, const AnalysisResult&) = default;
};

/// The k most probable tags, descending; equal probabilities go to the
/// lower tag index. Throws InvalidArgument unless 1 <= k <= size and every
/// value is finite and non-negative.
std::vector<TagConfidence> top_k(std::span<const float> distribution, std::size_t k);

/// Tag counts over the preferred prediction of each result (context when
/// present, otherwise no-context). Throws InvalidArgument on empty input.
std::vector<std::size_t> summarize(const std::vector<UtteranceResult>& results, std::size_t num_tags);

/// Runs both models over a conversation. Models are shared and read-only;
/// one Analyzer may be used from any number of threads.
class Analyzer {
 public:
  /// Throws InvalidArgument when the models disagree on vocabulary or tags.
  Analyzer(std::shared_ptr<const NoContextModel> no_context, std::shared_ptr<const ContextModel> context);

  /// Throws InvalidArgument when no line survives cleaning or top_k is out
  /// of range.
  AnalysisResult analyze(const AnalysisRequest& request) const;

  const NoContextModel& no_context_model() const noexcept { return *no_context_; }
  const ContextModel& context_model() const noexcept { return *context_; }
  const std::vector<std::string>& tags() const noexcept { return no_context_->tags(); }
  ModelMetadata metadata() const;

 private:
  std::shared_ptr<const NoContextModel> no_context_;
  std::shared_ptr<const ContextModel> context_;
};

/// Canonical wire form shared by the HTTP API and offline analysis.
/// Display names come from the SwDA tag table when the mnemonic is known.
nlohmann::ordered_json to_json(const AnalysisResult& result, const std::vector<std::string>& tags);
std::string to_json_string(const AnalysisResult& result, const std::vector<std::string>& tags);

struct RequestLimits {
  std::size_t max_utterances = 200;
  std::size_t max_utterance_chars = 1000;
};

/// A rejected request, carrying the HTTP status and machine-readable code.
class RequestError : public Error {
 public:
  RequestError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Parses {"api_version"?, "utterances": [...], "top_k"?}. Blank lines are
/// kept here; the analyzer drops them. Throws RequestError.
AnalysisRequest parse_analysis_request(std::string_view body, const RequestLimits& limits,
                                       std::size_t default_top_k = kDefaultTopK);

/// One utterance per line; a trailing carriage return is stripped.
std::vector<std::string> split_lines(std::string_view text);

/// {"code": ..., "message": ...}
std::string error_body(std::string_view code, std::string_view message);

}  // namespace dwiz
