#include <benchmark/benchmark.h>

#include <vector>

#include "uat/corpus.hpp"
#include "uat/mlm.hpp"
#include "uat/search.hpp"
#include "uat/vocab.hpp"

namespace {

using namespace uat;

struct World {
  MlmModel plm;
  std::vector<MaskedExample> batch;
};

// Untrained weights are enough for timing.
const World& world() {
  static const World w = [] {
    const auto corpus = synthetic_corpus(1000, 1);
    const auto vocab = build_vocab(corpus, 1000);
    MlmConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 256;
    cfg.max_seq_len = 32;
    cfg.seed = 1;
    MlmModel plm(vocab, cfg);
    MaskedDatasetOptions o;
    o.n_examples = 16;
    o.seed = 2;
    auto batch = make_masked_dataset(corpus, plm.vocab, o).examples;
    return World{std::move(plm), std::move(batch)};
  }();
  return w;
}

TokenIds trigger(std::size_t length) { return random_trigger(world().plm.vocab, length, 3).token_ids; }

void BM_PredictMask(benchmark::State& state) {
  const auto& w = world();
  const auto in = assemble_phase1(w.batch.front(), trigger(5), w.plm.lm.config().max_seq_len);
  for (auto _ : state) benchmark::DoNotOptimize(w.plm.lm.predict_mask(in.tokens, in.mask_pos));
}
BENCHMARK(BM_PredictMask);

void BM_TriggerGradient(benchmark::State& state) {
  const auto& w = world();
  const auto t = trigger(std::size_t(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(trigger_gradient(w.plm.lm, w.batch, t, 0.05, ContextMode::kLeftOnly));
  }
}
BENCHMARK(BM_TriggerGradient)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);

void BM_CandidateEvaluation(benchmark::State& state) {
  const auto& w = world();
  const auto t = trigger(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_trigger(w.plm.lm, w.batch, t, 0.05, ContextMode::kLeftOnly));
  }
}
BENCHMARK(BM_CandidateEvaluation)->Unit(benchmark::kMillisecond);

void BM_HotFlipScores(benchmark::State& state) {
  const auto& w = world();
  const auto t = trigger(5);
  const auto g = trigger_gradient(w.plm.lm, w.batch, t, 0.05, ContextMode::kLeftOnly);
  const std::size_t d = w.plm.lm.config().d_model;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        hotflip_scores_from_gradient(w.plm.lm, std::span<const float>(g.grad).subspan(0, d), t[0]));
  }
}
BENCHMARK(BM_HotFlipScores);

}  // namespace

BENCHMARK_MAIN();
