// Acceptance run. Prints one PASS / FAIL / SKIP line per criterion and
// exits nonzero when anything fails. Criteria that need the full SwDA
// release run only when DWIZ_SWDA_DIR points at it.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "../common/gradcheck_cases.hpp"
#include "../unit/test_support.hpp"
#include "dwiz/analysis.hpp"
#include "dwiz/gateway.hpp"
#include "dwiz/model_io.hpp"
#include "dwiz/model_server.hpp"
#include "dwiz/text.hpp"
#include "dwiz/training.hpp"

namespace {

using namespace dwiz;
using Json = nlohmann::json;

// Reference results and the tolerances they are checked with.
constexpr std::size_t kTrainConversations = 1115;
constexpr std::size_t kTrainUtterances = 196258;
constexpr std::size_t kTestConversations = 19;
constexpr std::size_t kTestUtterances = 4186;
constexpr double kBaselineAccuracy = 31.50;
constexpr double kBaselineTolerance = 0.5;
constexpr double kNoContextAccuracy = 71.76;
constexpr double kContextN2Accuracy = 74.37;
constexpr double kAccuracyTolerance = 2.0;
constexpr double kMinContextGain = 1.0;
constexpr double kPlateauTolerance = 1.0;

constexpr double kGradcheckTolerance = 1e-4;
constexpr double kGradcheckEpsilon = 1e-3;
constexpr double kCapacityAccuracy = 0.95;
constexpr std::size_t kCapacityEpochs = 200;
constexpr std::size_t kCapacityUtterances = 20;
constexpr std::size_t kRoundTripUtterances = 100;
constexpr double kGoldenMinLinf = 0.05;
constexpr int kConcurrentRequests = 100;

enum class Outcome { Pass, Fail, Skip };

struct Line {
  Outcome outcome;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Line& line) {
  const char* tag = line.outcome == Outcome::Pass ? "PASS" : line.outcome == Outcome::Fail ? "FAIL" : "SKIP";
  if (line.outcome == Outcome::Fail) ++failures;
  std::cout << tag << "  " << name << ": " << line.detail << std::endl;
}

void run(const std::string& name, const std::function<Line()>& check) {
  try {
    report(name, check());
  } catch (const std::exception& e) {
    report(name, {Outcome::Fail, std::string("exception: ") + e.what()});
  }
}

Line verdict(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Full corpus

struct FullCorpus {
  CorpusSplit split;
  std::shared_ptr<const NoContextModel> encoder;
  double no_context_accuracy = 0.0;
  std::optional<std::vector<SweepRow>> sweep;
};

std::optional<std::filesystem::path> swda_dir() {
  const char* dir = std::getenv("DWIZ_SWDA_DIR");
  if (!dir || !*dir) return std::nullopt;
  return std::filesystem::path(dir);
}

const Line kNoCorpus{Outcome::Skip, "SwDA release not available (set DWIZ_SWDA_DIR to run)"};

FullCorpus& full_corpus() {
  static FullCorpus fc = [] {
    FullCorpus c;
    const auto all = load_swda(*swda_dir());
    const auto test_ids = default_test_ids();
    c.split = split_corpus(all, default_train_ids(all, test_ids, {}), test_ids, 19);
    return c;
  }();
  return fc;
}

Line corpus_counts() {
  if (!swda_dir()) return kNoCorpus;
  const auto& s = full_corpus().split;
  const auto train = count(s.train);
  const auto val = count(s.validation);
  const auto test = count(s.test);
  // The reference train counts include the conversations held out here
  // for early stopping.
  const std::size_t train_convs = train.conversations + val.conversations;
  const std::size_t train_utts = train.utterances + val.utterances;
  return verdict(train_convs == kTrainConversations && train_utts == kTrainUtterances &&
                     test.conversations == kTestConversations && test.utterances == kTestUtterances,
                 fmt("train %zu conv / %zu utt (expected %zu / %zu), test %zu / %zu (expected %zu / %zu)",
                     train_convs, train_utts, kTrainConversations, kTrainUtterances, test.conversations,
                     test.utterances, kTestConversations, kTestUtterances));
}

Line baseline() {
  if (!swda_dir()) return kNoCorpus;
  const double acc = 100.0 * most_common_class_baseline(full_corpus().split);
  return verdict(std::abs(acc - kBaselineAccuracy) <= kBaselineTolerance,
                 fmt("%.2f%% (expected %.2f +/- %.1f)", acc, kBaselineAccuracy, kBaselineTolerance));
}

Line no_context_model() {
  if (!swda_dir()) return kNoCorpus;
  auto& fc = full_corpus();
  const auto r = train_no_context(fc.split, TrainConfig{});
  fc.encoder = r.model;
  fc.no_context_accuracy = 100.0 * r.test.accuracy;
  return verdict(std::abs(fc.no_context_accuracy - kNoContextAccuracy) <= kAccuracyTolerance &&
                     r.history.size() <= TrainConfig{}.max_epochs,
                 fmt("%.2f%% after %zu epochs (expected %.2f +/- %.1f)", fc.no_context_accuracy, r.history.size(),
                     kNoContextAccuracy, kAccuracyTolerance));
}

const std::vector<SweepRow>& sweep_rows() {
  auto& fc = full_corpus();
  if (!fc.sweep) fc.sweep = context_sweep(fc.split, fc.encoder, {1, 2, 3, 4}, TrainConfig{});
  return *fc.sweep;
}

Line context_model_n2() {
  if (!swda_dir()) return kNoCorpus;
  if (!full_corpus().encoder) return {Outcome::Fail, "no-context model unavailable"};
  const double acc = 100.0 * sweep_rows()[1].accuracy;
  const double gain = acc - full_corpus().no_context_accuracy;
  return verdict(std::abs(acc - kContextN2Accuracy) <= kAccuracyTolerance && gain >= kMinContextGain,
                 fmt("%.2f%% (expected %.2f +/- %.1f), gain over no-context %.2f points (need >= %.1f)", acc,
                     kContextN2Accuracy, kAccuracyTolerance, gain, kMinContextGain));
}

Line context_sweep_plateau() {
  if (!swda_dir()) return kNoCorpus;
  if (!full_corpus().encoder) return {Outcome::Fail, "no-context model unavailable"};
  const auto& rows = sweep_rows();
  const double gap = 100.0 * std::abs(rows[1].accuracy - rows[3].accuracy);
  std::ostringstream detail;
  for (const auto& r : rows) detail << "n=" << r.context_size << " " << fmt("%.2f%% ", 100.0 * r.accuracy);
  detail << fmt("|n2 - n4| = %.2f (need < %.1f)", gap, kPlateauTolerance);
  return verdict(gap < kPlateauTolerance, detail.str());
}

// ---------------------------------------------------------------------------
// Fixture criteria

Line gradient_fidelity() {
  nn::GradcheckOptions opt;
  opt.epsilon = kGradcheckEpsilon;
  opt.tolerance = kGradcheckTolerance;
  const auto nc = testing::gradcheck_no_context(1, {}, opt);
  const auto cx = testing::gradcheck_context(1, {}, opt);
  const auto hier = testing::gradcheck_hierarchical(1, {}, opt);
  const auto bad_nc = testing::gradcheck_no_context(1, {param_names::kEncoderRecurrent}, opt);
  const auto bad_cx = testing::gradcheck_context(1, {param_names::kContextInput}, opt);
  const bool ok = nc.passed && cx.passed && hier.passed && !bad_nc.passed && !bad_cx.passed;
  return verdict(ok, fmt("max rel err no-context %.2e, context %.2e, two-level %.2e (tol %.0e); "
                         "corrupted backward caught: %s/%s",
                         nc.max_relative_error(), cx.max_relative_error(), hier.max_relative_error(),
                         kGradcheckTolerance, bad_nc.passed ? "no" : "yes", bad_cx.passed ? "no" : "yes"));
}

/// The first 20 fixture utterances with distinct cleaned text, as one
/// conversation. Distinct texts make 100% attainable.
Conversation capacity_fixture() {
  const auto all = load_swda(testing::fixture_swda());
  Conversation c;
  c.id = "overfit20";
  std::set<std::string> seen;
  for (const auto& conv : all) {
    for (const auto& u : conv.utterances) {
      if (c.utterances.size() == kCapacityUtterances) break;
      if (!seen.insert(u.clean_text).second) continue;
      c.utterances.push_back(u);
    }
  }
  return c;
}

Line capacity() {
  CorpusSplit split;
  split.train = {capacity_fixture()};
  TrainConfig cfg;
  cfg.max_epochs = kCapacityEpochs;
  cfg.patience = kCapacityEpochs;
  cfg.min_count = 1;
  const auto r = train_no_context(split, cfg);
  const auto rep = evaluate(*r.model, split.train, "train");
  return verdict(rep.accuracy >= kCapacityAccuracy && r.history.size() <= kCapacityEpochs,
                 fmt("%zu utterances, train accuracy %.1f%% at best epoch %zu of %zu (need >= %.0f%%)",
                     rep.utterances_evaluated, 100.0 * rep.accuracy, r.best_epoch, r.history.size(),
                     100.0 * kCapacityAccuracy));
}

Line determinism() {
  const auto split = testing::fixture_split();
  auto cfg = testing::fixture_train_config();
  cfg.max_epochs = 10;
  cfg.patience = 10;
  const auto a = train_no_context(split, cfg);
  const auto b = train_no_context(split, cfg);
  const auto ca = train_context(split, a.model, cfg);
  const auto cb = train_context(split, b.model, cfg);

  testing::TempDir dir;
  save_model(*a.model, dir / "a.dwm");
  save_model(*b.model, dir / "b.dwm");
  save_model(*ca.model, dir / "ca.dwm");
  save_model(*cb.model, dir / "cb.dwm");
  const bool same_files = file_crc32(dir / "a.dwm") == file_crc32(dir / "b.dwm") &&
                          serialize_model(*a.model) == serialize_model(*b.model) &&
                          serialize_model(*ca.model) == serialize_model(*cb.model);

  const auto nc = load_no_context_model(dir / "a.dwm");
  const auto cx = load_context_model(dir / "ca.dwm");
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t c = 0; c < split.train.size(); ++c) {
    for (std::size_t p = 0; p < split.train[c].utterances.size(); ++p) positions.emplace_back(c, p);
  }
  for (std::size_t c = 0; c < split.test.size(); ++c) {
    for (std::size_t p = 0; p < split.test[c].utterances.size(); ++p) positions.emplace_back(split.train.size() + c, p);
  }
  auto conv_at = [&](std::size_t c) -> const Conversation& {
    return c < split.train.size() ? split.train[c] : split.test[c - split.train.size()];
  };
  std::size_t identical = 0;
  for (std::size_t i = 0; i < kRoundTripUtterances; ++i) {
    const auto [c, p] = positions[i % positions.size()];
    const auto& conv = conv_at(c);
    const auto ids = a.model->encode(conv.utterances[p].tokens);
    bool same = a.model->predict(ids) == nc->predict(ids);
    const auto reps_mem = conversation_representations(*a.model, conv);
    const auto reps_disk = conversation_representations(*nc, conv);
    const auto w_mem = context_window(reps_mem, p, cfg.context_size, BoundaryPolicy::Pad);
    const auto w_disk = context_window(reps_disk, p, cfg.context_size, BoundaryPolicy::Pad);
    same = same && ca.model->predict_from_representations(*w_mem) == cx->predict_from_representations(*w_disk);
    identical += same;
  }
  return verdict(same_files && identical == kRoundTripUtterances,
                 fmt("repeat runs bit-identical: %s; reloaded predictions identical on %zu/%zu utterances",
                     same_files ? "yes" : "no", identical, kRoundTripUtterances));
}

/// The same "Yeah." once after
/// a yes-no question and once after an opinion.
const std::vector<std::string> kGoldenDialogue{
    "Hi.",
    "What do you think about the schools?",
    "I think they are pretty good.",
    "Uh-huh.",
    "Do you have kids in school?",
    "Yeah.",
    "I think the schools are getting better.",
    "Yeah.",
};
constexpr std::size_t kYeahAfterQuestion = 5;
constexpr std::size_t kYeahAfterOpinion = 7;

Line golden_context_sensitivity() {
  const auto& m = testing::fixture_models();
  const Analyzer analyzer(m.no_context, m.context);
  const auto result = analyzer.analyze({kGoldenDialogue, kNumTags});
  const auto& q = result.results[kYeahAfterQuestion];
  const auto& s = result.results[kYeahAfterOpinion];
  if (!q.context || !s.context) return {Outcome::Fail, "context predictions missing for the two \"Yeah.\" rows"};

  const auto& tags = analyzer.tags();
  const std::string ctx_q = tags[static_cast<std::size_t>(q.context->front().tag)];
  const std::string ctx_s = tags[static_cast<std::size_t>(s.context->front().tag)];
  const std::string nc_q = tags[static_cast<std::size_t>(q.no_context.front().tag)];
  const std::string nc_s = tags[static_cast<std::size_t>(s.no_context.front().tag)];
  const bool strict = ctx_q == "ny" && ctx_s == "b" && nc_q == nc_s;

  std::vector<float> pq(kNumTags), ps(kNumTags);
  for (const auto& t : *q.context) pq[static_cast<std::size_t>(t.tag)] = t.confidence;
  for (const auto& t : *s.context) ps[static_cast<std::size_t>(t.tag)] = t.confidence;
  double linf = 0.0;
  for (std::size_t k = 0; k < kNumTags; ++k) linf = std::max(linf, std::abs(double(pq[k]) - double(ps[k])));

  const std::string tally = "context " + ctx_q + " / " + ctx_s + ", no-context " + nc_q + " / " + nc_s +
                            fmt(", context L-inf %.3f", linf);
  if (strict) return {Outcome::Pass, "strict form holds: " + tally};
  return verdict(linf > kGoldenMinLinf,
                 fmt("strict form not met, downgraded check L-inf > %.2f: ", kGoldenMinLinf) + tally);
}

Line server_contract() {
  const auto& m = testing::fixture_models();
  testing::TempDir dir;
  ServerConfig sc;
  sc.no_context_model = dir / "nc.dwm";
  sc.context_model = dir / "cx.dwm";
  save_model(*m.no_context, sc.no_context_model);
  save_model(*m.context, sc.context_model);
  ModelServer model_server(ModelService::load(sc), "127.0.0.1", 0);

  GatewayConfig gc;
  gc.backends = {{"fixture", "http://127.0.0.1:" + std::to_string(model_server.port()), 0}};
  gc.timeout_seconds = 30;
  auto gateway = std::make_shared<Gateway>(gc, std::nullopt);
  GatewayServer gateway_server(gateway, "127.0.0.1", 0);

  auto client = [&] {
    httplib::Client c("127.0.0.1", gateway_server.port());
    c.set_read_timeout(60, 0);
    return c;
  };
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  const std::string body = Json{{"utterances", kGoldenDialogue}}.dump();
  auto c = client();
  const auto first = c.Post("/api/analyze", body, "application/json");
  const auto second = c.Post("/api/analyze", body, "application/json");
  expect(first && first->status == 200, "analyze via gateway did not return 200");
  if (first && first->status == 200) {
    expect(first->get_header_value("X-Backend-Id") == "fixture", "X-Backend-Id missing");
    const auto j = Json::parse(first->body);
    const std::size_t n = m.context->context_size();
    std::size_t not_enough = 0;
    for (std::size_t i = 0; i < j["results"].size(); ++i) {
      const auto& r = j["results"][i];
      const bool missing = r["context"] == kNotEnoughContext;
      not_enough += missing;
      expect(missing == (i < n), "NotEnoughContext on row " + std::to_string(i + 1));
      expect(r["no_context"].size() == 3, "no_context list not top-3 on row " + std::to_string(i + 1));
      if (!missing) expect(r["context"].size() == 3, "context list not top-3 on row " + std::to_string(i + 1));
    }
    expect(not_enough == n, "NotEnoughContext count " + std::to_string(not_enough));
    expect(second && second->body == first->body, "repeat request body differs");
  }

  struct ErrorCase {
    std::string body;
    int status;
    std::string code;
  };
  const std::vector<ErrorCase> errors{
      {"{\"utterances\": [", 400, "malformed_json"},
      {R"({"utterances": []})", 400, "empty_request"},
      {R"({"utterances": "Yeah."})", 400, "invalid_request"},
      {Json{{"utterances", std::vector<std::string>(201, "Yeah.")}}.dump(), 413, "too_many_utterances"},
      {Json{{"utterances", {std::string(1001, 'a')}}}.dump(), 413, "utterance_too_long"},
      {R"({"utterances": ["Yeah."], "top_k": 0})", 400, "invalid_top_k"},
  };
  for (const auto& e : errors) {
    const auto r = c.Post("/api/analyze", e.body, "application/json");
    const bool ok = r && r->status == e.status && Json::parse(r->body).value("code", "") == e.code;
    expect(ok, "expected " + std::to_string(e.status) + " " + e.code);
  }

  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < kConcurrentRequests; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      auto cl = client();
      const auto r = cl.Post("/api/analyze", body, "application/json");
      return r && r->status == 200 ? r->body : std::string("<failed>");
    }));
  }
  std::set<std::string> bodies;
  for (auto& f : futures) bodies.insert(f.get());
  expect(bodies.size() == 1 && first && *bodies.begin() == first->body,
         std::to_string(bodies.size()) + " distinct bodies from concurrent requests");

  std::string detail = problems.empty() ? "NotEnoughContext on first " + std::to_string(m.context->context_size()) +
                                              " rows, top-3 elsewhere, " + std::to_string(errors.size()) +
                                              " error cases, " + std::to_string(kConcurrentRequests) +
                                              " concurrent requests identical"
                                        : "";
  for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  return verdict(problems.empty(), detail);
}

}  // namespace

int main() {
  run("corpus counts", corpus_counts);
  run("most-common-class baseline", baseline);
  run("no-context model accuracy", no_context_model);
  run("context model n=2 accuracy", context_model_n2);
  run("context sweep plateau", context_sweep_plateau);
  run("gradient fidelity", gradient_fidelity);
  run("capacity sanity", capacity);
  run("determinism", determinism);
  run("context-sensitivity golden test", golden_context_sensitivity);
  run("server contract", server_contract);
  std::cout << (failures ? "acceptance: FAILED (" + std::to_string(failures) + ")" : std::string("acceptance: OK"))
            << std::endl;
  return failures ? 1 : 0;
}
