#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "dwiz/model_io.hpp"
#include "dwiz/training.hpp"
#include "test_support.hpp"

namespace dwiz {
namespace {

TrainConfig quick_config() {
  auto cfg = testing::fixture_train_config();
  cfg.max_epochs = 4;
  cfg.patience = 4;
  return cfg;
}

TEST(TrainConfig, DefaultsAndJsonRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(d.batch_size, 32u);
  EXPECT_EQ(d.max_epochs, 30u);
  EXPECT_EQ(d.patience, 3u);
  EXPECT_DOUBLE_EQ(d.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(d.beta1, 0.9);
  EXPECT_DOUBLE_EQ(d.beta2, 0.999);
  EXPECT_DOUBLE_EQ(d.epsilon, 1e-7);
  EXPECT_DOUBLE_EQ(d.clip_norm, 5.0);
  EXPECT_EQ(d.min_count, 2);
  EXPECT_EQ(d.max_len, 25u);
  EXPECT_EQ(d.dims, ModelDims{});

  auto cfg = quick_config();
  cfg.boundary_policy = BoundaryPolicy::Pad;
  const auto back = TrainConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  EXPECT_EQ(back.to_json(), cfg.to_json());

  const auto partial = TrainConfig::from_json(nlohmann::json{{"seed", 5}, {"max_epochs", 2}});
  EXPECT_EQ(partial.seed, 5u);
  EXPECT_EQ(partial.batch_size, 32u);
}

TEST(TrainConfig, RejectsBadValues) {
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"bogus", 1}}), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::array()), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"batch_size", "big"}}), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"batch_size", 0}}), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"boundary_policy", "wrap"}}), InvalidArgument);
  TrainConfig c;
  c.clip_norm = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.dims.hidden_dim = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(BoundaryPolicy, Parse) {
  EXPECT_EQ(parse_boundary_policy("skip"), BoundaryPolicy::Skip);
  EXPECT_EQ(parse_boundary_policy("pad"), BoundaryPolicy::Pad);
  EXPECT_EQ(to_string(BoundaryPolicy::Pad), "pad");
  EXPECT_THROW(parse_boundary_policy("Skip "), InvalidArgument);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<float>{0.1f, 0.5f, 0.5f}), 1);
  EXPECT_EQ(argmax(std::vector<float>{0.3f}), 0);
  EXPECT_EQ(argmax(std::vector<float>{0.2f, 0.2f, 0.2f}), 0);
  EXPECT_THROW(argmax(std::vector<float>{}), InvalidArgument);
}

TEST(MakeReport, HandTally) {
  // gold:      0 0 1 2 2 2
  // predicted: 0 1 1 2 0 2
  const auto r = make_report("x", {0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 0, 2}, 3, 4);
  EXPECT_EQ(r.utterances_evaluated, 6u);
  EXPECT_EQ(r.utterances_skipped, 3u);
  EXPECT_EQ(r.correct, 4u);
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 6.0);
  EXPECT_EQ(r.per_tag[0], (TagMetrics{2, 2, 1, 0.5, 0.5}));
  EXPECT_EQ(r.per_tag[1], (TagMetrics{1, 2, 1, 0.5, 1.0}));
  EXPECT_EQ(r.per_tag[2], (TagMetrics{3, 2, 2, 1.0, 2.0 / 3.0}));
  EXPECT_EQ(r.per_tag[3], (TagMetrics{}));
  EXPECT_EQ(r.confusion[2][0], 1u);
  EXPECT_THROW(make_report("x", {0}, {}, 0, 4), InvalidArgument);
  EXPECT_THROW(make_report("x", {4}, {0}, 0, 4), InvalidArgument);
  EXPECT_EQ(make_report("x", {}, {}, 0, 4).accuracy, 0.0);
}

TEST(ContextWindowProperty, RowsComeFromTheRightPositions) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng.below(8);
    const std::size_t hid = 1 + rng.below(4);
    const std::size_t n = rng.below(5);
    Tensor<float> reps({len, hid});
    for (float& v : reps.values()) v = static_cast<float>(rng.uniform(0.5, 1.0));  // never zero
    for (std::size_t pos = 0; pos < len; ++pos) {
      const auto skip = context_window(reps, pos, n, BoundaryPolicy::Skip);
      const auto pad = context_window(reps, pos, n, BoundaryPolicy::Pad);
      ASSERT_TRUE(pad);
      ASSERT_EQ(pad->dim(0), n + 1);
      EXPECT_EQ(skip.has_value(), pos >= n);
      for (std::size_t slot = 0; slot <= n; ++slot) {
        const std::size_t back = n - slot;
        for (std::size_t k = 0; k < hid; ++k) {
          const float expected = back <= pos ? reps.at(pos - back, k) : 0.0f;
          EXPECT_EQ(pad->at(slot, k), expected);
          if (skip) {
            EXPECT_EQ(skip->at(slot, k), expected);
          }
        }
      }
    }
    EXPECT_THROW(context_window(reps, len, n, BoundaryPolicy::Pad), InvalidArgument);
  }
}

TEST(Evaluate, ConstantPredictorMatchesBaseline) {
  const auto split = testing::fixture_split();
  const int mode = most_common_tag(split.train);
  const auto r = evaluate_constant(mode, split.test);
  EXPECT_DOUBLE_EQ(r.accuracy, most_common_class_baseline(split));
  EXPECT_EQ(r.utterances_evaluated, 13u);
  EXPECT_EQ(r.correct, 2u);
}

TEST(Evaluate, SkipPolicyDropsFirstNUtterances) {
  const auto& models = testing::fixture_models();
  const auto split = testing::fixture_split();
  const auto skip = evaluate(*models.context, split.test, BoundaryPolicy::Skip);
  EXPECT_EQ(skip.utterances_skipped, 2u * split.test.size());
  EXPECT_EQ(skip.utterances_evaluated + skip.utterances_skipped, utterance_count(split.test));
  const auto pad = evaluate(*models.context, split.test, BoundaryPolicy::Pad);
  EXPECT_EQ(pad.utterances_skipped, 0u);
  EXPECT_EQ(pad.utterances_evaluated, utterance_count(split.test));
}

TEST(Evaluate, AgreesWithDirectPrediction) {
  const auto& models = testing::fixture_models();
  const auto split = testing::fixture_split();
  std::size_t correct = 0, total = 0;
  for (const auto& conv : split.test) {
    for (const auto& u : conv.utterances) {
      const auto p = models.no_context->predict(models.no_context->encode(u.tokens));
      correct += argmax(p) == u.tag;
      ++total;
    }
  }
  const auto r = evaluate(*models.no_context, split.test);
  EXPECT_EQ(r.correct, correct);
  EXPECT_EQ(r.utterances_evaluated, total);
}

TEST(Training, LearnsTheFixture) {
  const auto& models = testing::fixture_models();
  const auto split = testing::fixture_split();
  EXPECT_GE(evaluate(*models.no_context, split.train).accuracy, 0.9);
  EXPECT_GE(evaluate(*models.context, split.train).accuracy, 0.9);
}

TEST(Training, LossFallsDuringFirstEpoch) {
  auto cfg = quick_config();
  cfg.batch_size = 2;
  cfg.max_epochs = 1;
  const auto r = train_no_context(testing::fixture_split(), cfg);
  EXPECT_NEAR(r.initial_loss, std::log(42.0), 0.1);
  EXPECT_LT(r.first_epoch_final_loss, r.initial_loss);
}

TEST(Training, DeterministicForFixedSeed) {
  const auto split = testing::fixture_split();
  const auto cfg = quick_config();
  const auto a = train_no_context(split, cfg);
  const auto b = train_no_context(split, cfg);
  EXPECT_EQ(serialize_model(*a.model), serialize_model(*b.model));
  auto other = cfg;
  other.seed = cfg.seed + 1;
  EXPECT_NE(train_no_context(split, other).model->checksum(), a.model->checksum());
}

TEST(Training, EarlyStoppingInvariant) {
  auto cfg = quick_config();
  cfg.max_epochs = 40;
  cfg.patience = 2;
  cfg.learning_rate = 0.05;
  const auto r = train_no_context(testing::fixture_split(), cfg);
  ASSERT_FALSE(r.history.empty());
  const double best = std::max_element(r.history.begin(), r.history.end(), [](const auto& x, const auto& y) {
                        return x.validation_accuracy < y.validation_accuracy;
                      })->validation_accuracy;
  EXPECT_EQ(r.history[r.best_epoch - 1].validation_accuracy, best);
  // The first epoch reaching the best score is the one kept.
  for (std::size_t e = 0; e + 1 < r.best_epoch; ++e) EXPECT_LT(r.history[e].validation_accuracy, best);
  if (r.history.size() < cfg.max_epochs) {
    EXPECT_EQ(r.history.size(), r.best_epoch + cfg.patience);
  }
  for (std::size_t e = 0; e < r.history.size(); ++e) EXPECT_EQ(r.history[e].epoch, e + 1);
  // Restored parameters are the best epoch's.
  EXPECT_DOUBLE_EQ(evaluate(*r.model, testing::fixture_split().train).accuracy, best);
}

TEST(Training, EncoderStaysFrozen) {
  const auto& models = testing::fixture_models();
  const auto split = testing::fixture_split();
  const auto before = serialize_model(*models.no_context);
  const auto r = train_context(split, models.no_context, quick_config());
  EXPECT_EQ(r.encoder_checksum_before, r.encoder_checksum_after);
  EXPECT_EQ(r.encoder_checksum_after, models.no_context->checksum());
  EXPECT_EQ(serialize_model(*models.no_context), before);
  EXPECT_EQ(&r.model->encoder(), models.no_context.get());
  EXPECT_EQ(r.model->id(), "context-n2");
}

TEST(Training, ContextArgumentErrors) {
  const auto split = testing::fixture_split();
  auto cfg = quick_config();
  EXPECT_THROW(train_context(split, nullptr, cfg), InvalidArgument);
  cfg.context_size = 0;
  EXPECT_THROW(train_context(split, testing::fixture_models().no_context, cfg), InvalidArgument);
  CorpusSplit empty;
  EXPECT_THROW(train_no_context(empty, quick_config()), Error);
}

TEST(Sweep, ParallelEqualsSequentialAndEvaluate) {
  const auto split = testing::fixture_split();
  const auto enc = testing::fixture_models().no_context;
  auto cfg = quick_config();
  cfg.max_epochs = 3;
  const auto par = context_sweep(split, enc, {1, 2, 3}, cfg, true);
  const auto seq = context_sweep(split, enc, {1, 2, 3}, cfg, false);
  ASSERT_EQ(par.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(par[i].context_size, i + 1);
    EXPECT_EQ(par[i].model->checksum(), seq[i].model->checksum());
    EXPECT_EQ(par[i].test, seq[i].test);
    EXPECT_EQ(par[i].test, evaluate(*par[i].model, split.test, cfg.boundary_policy));
    EXPECT_DOUBLE_EQ(par[i].accuracy, par[i].test.accuracy);
  }
  EXPECT_THROW(context_sweep(split, enc, {}, cfg), InvalidArgument);
}

TEST(ResultsTable, Layout) {
  ResultsTable t;
  t.most_common_class = 0.3137;
  t.no_context = 0.6508;
  t.context = {{1, 0.7071}, {2, 0.7254}};
  const std::string expected =
      "Model setup                          Acc.(%)\n"
      "--------------------------------------------\n"
      "Most common class                      31.37\n"
      "Non-utterance-context model            65.08\n"
      "Context-based model (n=1 utt.)         70.71\n"
      "Context-based model (n=2 utts.)        72.54\n";
  EXPECT_EQ(render_results_table(t), expected);
  const auto j = to_json(t);
  EXPECT_EQ(j["context"][1]["context_size"], 2);
  EXPECT_TRUE(to_json(ResultsTable{})["no_context"].is_null());
}

TEST(EvalReportJson, Shape) {
  const auto names = TagSet::swda().mnemonics();
  const auto r = make_report("test", {0, 1}, {0, 0}, 1, 42);
  const auto j = to_json(r, names);
  EXPECT_EQ(j["split"], "test");
  EXPECT_EQ(j["utterances_skipped"], 1);
  EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), 0.5);
  EXPECT_EQ(j["per_tag"][names[0]]["predicted"], 2);
  EXPECT_EQ(j["confusion"].size(), 42u);
}

}  // namespace
}  // namespace dwiz
