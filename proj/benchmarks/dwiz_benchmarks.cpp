#include <benchmark/benchmark.h>

#include "dwiz/analysis.hpp"
#include "dwiz/models.hpp"

namespace {

using namespace dwiz;

Vocabulary bench_vocab() {
  std::vector<std::string> words;
  for (int i = 0; i < 2000; ++i) words.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(words), 1);
}

std::vector<TokenId> sentence(std::size_t real_tokens) {
  std::vector<TokenId> ids(kDefaultMaxLen, Vocabulary::kPad);
  for (std::size_t i = 0; i < real_tokens; ++i) ids[kDefaultMaxLen - 1 - i] = static_cast<TokenId>(2 + 37 * i % 1900);
  return ids;
}

void BM_EncoderForward(benchmark::State& state) {
  auto net = NoContextNet<float>::zeros(2002, ModelDims{});
  Rng rng(1);
  initialize(net, rng);
  const auto ids = sentence(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(predict_no_context(net, std::span<const TokenId>(ids)));
}
BENCHMARK(BM_EncoderForward)->Arg(5)->Arg(25);

void BM_EncoderForwardBackward(benchmark::State& state) {
  auto net = NoContextNet<float>::zeros(2002, ModelDims{});
  Rng rng(1);
  initialize(net, rng);
  const auto ids = sentence(static_cast<std::size_t>(state.range(0)));
  auto g = nn::GradientStore<float>::zeros_like(std::as_const(net).parameters());
  for (auto _ : state) benchmark::DoNotOptimize(no_context_loss_and_grad<float>(net, ids, 3, g));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(5)->Arg(25);

void BM_ContextForwardBackward(benchmark::State& state) {
  auto net = ContextNet<float>::zeros(64, ModelDims{});
  Rng rng(2);
  initialize(net, rng);
  Tensor<float> reps({static_cast<std::size_t>(state.range(0)) + 1, 64});
  for (float& v : reps.values()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  auto g = nn::GradientStore<float>::zeros_like(std::as_const(net).parameters());
  for (auto _ : state) benchmark::DoNotOptimize(context_loss_and_grad<float>(net, reps, 7, g));
}
BENCHMARK(BM_ContextForwardBackward)->Arg(1)->Arg(2)->Arg(4);

void BM_AnalyzeConversation(benchmark::State& state) {
  auto enc = std::make_shared<const NoContextModel>(NoContextModel::initialize(bench_vocab(), 25, ModelDims{}, 3));
  auto ctx = std::make_shared<const ContextModel>(ContextModel::initialize(enc, 2, 4));
  const Analyzer analyzer(enc, ctx);
  AnalysisRequest req;
  for (int i = 0; i < state.range(0); ++i) req.utterances.push_back("w1 w2 w3 w4 w5 w6 w7 w8 unknown words here");
  for (auto _ : state) benchmark::DoNotOptimize(analyzer.analyze(req));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AnalyzeConversation)->Arg(10)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
