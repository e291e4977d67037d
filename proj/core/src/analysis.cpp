#include "dwiz/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "dwiz/tags.hpp"
#include "dwiz/text.hpp"
#include "dwiz/training.hpp"
#include "dwiz/vocabulary.hpp"

#ifndef DWIZ_VERSION
#define DWIZ_VERSION "0.0.0"
#endif

namespace dwiz {
namespace {

using Json = nlohmann::ordered_json;

// Shortest decimal that round-trips the float, so 0.33333334f prints as
// 0.33333334 rather than its double expansion.
double wire_float(float value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  *res.ptr = '\0';
  return std::strtod(buf, nullptr);
}

std::string display_name(const std::string& mnemonic) {
  const TagSet& swda = TagSet::swda();
  if (auto idx = swda.find(mnemonic)) return swda.at(*idx).display_name;
  return mnemonic;
}

Json predictions_json(const std::vector<TagConfidence>& preds, const std::vector<std::string>& tags) {
  Json arr = Json::array();
  for (const auto& p : preds) {
    const auto& mnemonic = tags.at(static_cast<std::size_t>(p.tag));
    arr.push_back({{"tag", mnemonic}, {"name", display_name(mnemonic)}, {"confidence", wire_float(p.confidence)}});
  }
  return arr;
}

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

}  // namespace

std::vector<TagConfidence> top_k(std::span<const float> distribution, std::size_t k) {
  if (k < 1 || k > distribution.size()) {
    throw InvalidArgument("top_k: k must be between 1 and " + std::to_string(distribution.size()) + ", got " +
                          std::to_string(k));
  }
  for (float p : distribution) {
    if (!std::isfinite(p) || p < 0.0f) throw InvalidArgument("top_k: not a probability distribution");
  }
  std::vector<int> order(distribution.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return distribution[static_cast<std::size_t>(a)] > distribution[static_cast<std::size_t>(b)];
  });
  std::vector<TagConfidence> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], distribution[static_cast<std::size_t>(order[i])]});
  return out;
}

std::vector<std::size_t> summarize(const std::vector<UtteranceResult>& results, std::size_t num_tags) {
  if (results.empty()) throw InvalidArgument("summarize: no results");
  std::vector<std::size_t> counts(num_tags, 0);
  for (const auto& r : results) {
    const auto& preds = r.context ? *r.context : r.no_context;
    if (preds.empty()) throw InvalidArgument("summarize: result without predictions");
    ++counts.at(static_cast<std::size_t>(preds.front().tag));
  }
  return counts;
}

Analyzer::Analyzer(std::shared_ptr<const NoContextModel> no_context, std::shared_ptr<const ContextModel> context)
    : no_context_(std::move(no_context)), context_(std::move(context)) {
  if (!no_context_ || !context_) throw InvalidArgument("analyzer needs both models");
  const NoContextModel& enc = context_->encoder();
  if (!(enc.vocabulary() == no_context_->vocabulary())) {
    throw InvalidArgument("models disagree on vocabulary (fingerprints " + std::to_string(enc.vocabulary().fingerprint()) +
                          " vs " + std::to_string(no_context_->vocabulary().fingerprint()) + ")");
  }
  if (enc.tags() != no_context_->tags()) throw InvalidArgument("models disagree on the tag set");
  if (enc.max_len() != no_context_->max_len()) throw InvalidArgument("models disagree on max_len");
}

ModelMetadata Analyzer::metadata() const {
  return {no_context_->id(), context_->id(), context_->context_size(), DWIZ_VERSION};
}

AnalysisResult Analyzer::analyze(const AnalysisRequest& request) const {
  const std::size_t num_tags = no_context_->tags().size();
  if (request.top_k < 1 || request.top_k > num_tags) {
    throw InvalidArgument("top_k must be between 1 and " + std::to_string(num_tags));
  }

  struct Line {
    const std::string* raw;
    std::vector<std::string> tokens;
  };
  std::vector<Line> lines;
  for (const auto& raw : request.utterances) {
    auto tokens = tokenize(clean_utterance(raw));
    if (!tokens.empty()) lines.push_back({&raw, std::move(tokens)});
  }
  if (lines.empty()) throw InvalidArgument("request has no utterances with content");

  const NoContextModel& encoder = context_->encoder();
  const std::size_t n = context_->context_size();
  const std::size_t hidden = encoder.dims().hidden_dim;
  Tensor<float> reps({lines.size(), hidden});

  AnalysisResult out;
  out.results.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    UtteranceResult r;
    r.index = i + 1;
    r.text = *lines[i].raw;
    r.speaker = i % 2 == 0 ? Speaker::A : Speaker::B;
    r.oov_token_count = count_oov(no_context_->vocabulary(), lines[i].tokens);
    const auto ids = no_context_->encode(lines[i].tokens);
    r.no_context = top_k(no_context_->predict(ids), request.top_k);

    const auto h = encoder.representation(encoder.encode(lines[i].tokens));
    std::copy(h.begin(), h.end(), reps.row(i).begin());
    if (auto window = context_window(reps, i, n, BoundaryPolicy::Skip)) {
      r.context = top_k(context_->predict_from_representations(*window), request.top_k);
    }
    out.results.push_back(std::move(r));
  }
  out.summary = summarize(out.results, num_tags);
  out.model_metadata = metadata();
  return out;
}

Json to_json(const AnalysisResult& result, const std::vector<std::string>& tags) {
  Json results = Json::array();
  for (const auto& r : result.results) {
    Json item;
    item["index"] = r.index;
    item["text"] = r.text;
    item["speaker"] = std::string(1, speaker_char(r.speaker));
    item["no_context"] = predictions_json(r.no_context, tags);
    item["context"] = r.context ? predictions_json(*r.context, tags) : Json(kNotEnoughContext);
    item["oov_token_count"] = r.oov_token_count;
    results.push_back(std::move(item));
  }
  Json summary = Json::object();
  for (std::size_t t = 0; t < result.summary.size(); ++t) {
    if (result.summary[t] > 0) summary[tags.at(t)] = result.summary[t];
  }
  Json j;
  j["api_version"] = kApiVersion;
  j["results"] = std::move(results);
  j["summary"] = std::move(summary);
  j["model_metadata"] = {{"no_context_model_id", result.model_metadata.no_context_model_id},
                         {"context_model_id", result.model_metadata.context_model_id},
                         {"context_size", result.model_metadata.context_size},
                         {"version", result.model_metadata.version}};
  return j;
}

std::string to_json_string(const AnalysisResult& result, const std::vector<std::string>& tags) {
  return to_json(result, tags).dump();
}

AnalysisRequest parse_analysis_request(std::string_view body, const RequestLimits& limits,
                                       std::size_t default_top_k) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw RequestError(400, "malformed_json", "request body is not valid JSON");
  }
  if (!j.is_object()) throw RequestError(400, "invalid_request", "request must be a JSON object");

  if (auto it = j.find("api_version"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>() != kApiVersion) {
      throw RequestError(400, "unsupported_api_version", "api_version must be \"" + std::string(kApiVersion) + "\"");
    }
  }

  const auto it = j.find("utterances");
  if (it == j.end() || !it->is_array()) {
    throw RequestError(400, "invalid_request", "\"utterances\" must be an array of strings");
  }
  if (it->empty()) throw RequestError(400, "empty_request", "\"utterances\" is empty");
  if (it->size() > limits.max_utterances) {
    throw RequestError(413, "too_many_utterances",
                       "at most " + std::to_string(limits.max_utterances) + " utterances per request");
  }

  AnalysisRequest req;
  req.top_k = default_top_k;
  for (const auto& u : *it) {
    if (!u.is_string()) throw RequestError(400, "invalid_request", "\"utterances\" must be an array of strings");
    auto s = u.get<std::string>();
    if (utf8_length(s) > limits.max_utterance_chars) {
      throw RequestError(413, "utterance_too_long",
                         "utterances are limited to " + std::to_string(limits.max_utterance_chars) + " characters");
    }
    req.utterances.push_back(std::move(s));
  }

  if (auto k = j.find("top_k"); k != j.end()) {
    if (!k->is_number_integer() || k->get<long long>() < 1 || k->get<long long>() > static_cast<long long>(kNumTags)) {
      throw RequestError(400, "invalid_top_k", "top_k must be an integer between 1 and " + std::to_string(kNumTags));
    }
    req.top_k = static_cast<std::size_t>(k->get<long long>());
  }
  return req;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

std::string error_body(std::string_view code, std::string_view message) {
  return Json{{"code", code}, {"message", message}}.dump();
}

}  // namespace dwiz
