// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cli_world.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "uat/checkpoint.hpp"
#include "uat/corpus.hpp"
#include "uat/defense.hpp"
#include "uat/eval.hpp"
#include "uat/mlm.hpp"
#include "uat/prompt.hpp"
#include "uat/search.hpp"
#include "uat/vocab.hpp"

namespace {

using namespace uat;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("criterion %d %-28s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1: autodiff ----------------------------------------------------------

Outcome autodiff() {
  const auto start = Clock::now();
  double worst32 = 0, worst64 = 0;
  std::size_t checks = 0;
  for (const auto& op : testing::op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto g = testing::check_op(op, seed);
      worst32 = std::max(worst32, g.f32_error);
      worst64 = std::max(worst64, g.f64_error);
      ++checks;
    }
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = testing::check_mask_grad(seed);
    worst32 = std::max(worst32, g.f32_error);
    worst64 = std::max(worst64, g.f64_error);
    ++checks;
  }
  const double t = seconds_since(start);
  return {worst32 < 1e-3 && worst64 < 1e-6 && t < 30,
          fmt("%zu checks, max rel err f32 %.2e f64 %.2e, %.1fs", checks, worst32, worst64, t)};
}

// ---- 2: exhaustive oracle -------------------------------------------------

Outcome exhaustive_oracle() {
  const auto& w = testing::small_world();
  const auto start = Clock::now();
  SearchConfig c;
  c.trigger_length = 1;
  c.steps = 1;
  c.beam_size = 1;
  c.candidate_size = w.plm.vocab.size();
  c.batch_size = w.dataset.size();
  c.frozen_batch = true;
  c.seed = 1;
  const auto r = beam_search(w.plm, w.dataset, c);
  const double t = seconds_since(start);
  const auto best = testing::exhaustive_single_token(w.plm.lm, w.dataset, w.plm.vocab.size());
  const bool same = r.beam.size() == 1 && r.beam[0].token_ids == TokenIds{best.best};
  return {same && w.plm.vocab.size() <= 64 && t < 10,
          fmt("|V|=%zu search '%s' oracle '%s' (loss %.6f), %.2fs", w.plm.vocab.size(),
              w.plm.vocab.token(r.beam[0].token_ids[0]).c_str(), w.plm.vocab.token(best.best).c_str(), best.loss, t)};
}

// ---- 3: loss decomposition ------------------------------------------------

Outcome loss_ranges() {
  const auto& w = testing::small_world();
  const std::span<const MaskedExample> batch(w.dataset.data(), 8);
  std::mt19937_64 rng(3);
  const std::vector<double> alphas(kAlphaGrid.begin(), kAlphaGrid.end());
  std::size_t bad_range = 0, bad_sum = 0, bad_hotflip = 0;
  double worst_sum = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t length = 1 + rng() % 7;
    const double alpha = alphas[rng() % alphas.size()];
    const auto mode = rng() % 2 == 0 ? ContextMode::kLeftOnly : ContextMode::kFull;
    const auto t = random_trigger(w.plm.vocab, length, 1000 + i).token_ids;
    const auto p = evaluate_trigger(w.plm.lm, batch, t, alpha, mode);
    if (!(p.adv <= 0 && p.sem >= -1 && p.sem <= 0)) ++bad_range;
    const double err = std::abs(p.combined - (p.adv + alpha * p.sem));
    worst_sum = std::max(worst_sum, err);
    if (err > 1e-5) ++bad_sum;
    const std::size_t k = rng() % length;
    if (hotflip_scores(w.plm.lm, batch, t, k, alpha, mode)[t[k]] != 0.0) ++bad_hotflip;
  }
  return {bad_range == 0 && bad_sum == 0 && bad_hotflip == 0,
          fmt("range violations %zu, max |combined-(adv+a*sem)| %.1e, nonzero incumbent scores %zu", bad_range,
              worst_sum, bad_hotflip)};
}

// ---- 4: frozen-batch monotonicity -----------------------------------------

Outcome monotone() {
  const auto& w = testing::small_world();
  std::size_t ok = 0;
  double worst_rise = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SearchConfig c;
    c.trigger_length = 5;
    c.beam_size = 5;
    c.candidate_size = 10;
    c.steps = 2;
    c.batch_size = 8;
    c.alpha = 0.05;
    c.frozen_batch = true;
    c.seed = seed;
    const auto r = beam_search(w.plm, w.dataset, c);
    for (std::size_t i = 1; i < r.position_trace.size(); ++i)
      worst_rise = std::max(worst_rise, r.position_trace[i] - r.position_trace[i - 1]);
    if (testing::non_increasing(r.position_trace)) ++ok;
  }
  return {ok == 5, fmt("%zu/5 runs non-increasing, largest step-to-step change %+.2e", ok, worst_rise)};
}

// ---- 5, 6, 8: toy sentiment world ----------------------------------------

struct ToyWorld {
  std::vector<std::string> corpus;
  MlmModel plm;
  MlmModel pfm;
  ResolvedPrompt prompt;
  std::vector<EvalExample> test;
  std::vector<EvalExample> train;
  std::vector<MaskedExample> dataset;
  double setup_seconds = 0;
};

ToyWorld build_toy_world() {
  const auto start = Clock::now();
  auto corpus = synthetic_corpus(4000, 1);
  const auto vocab = build_vocab(corpus, 1000);
  MlmConfig cfg;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 256;
  cfg.max_seq_len = 32;
  cfg.seed = 1;
  PretrainOptions po;
  po.epochs = 20;
  po.seed = 1;
  po.optimizer.learning_rate = 3e-3;
  auto plm = pretrain(vocab, corpus, cfg, po).model;

  const auto task = synthetic_task("sentiment", 200, 100, 2);
  const auto spec = default_prompt("sentiment", TemplateKind::kNull);
  FinetuneOptions fo;
  fo.shots = 32;
  fo.epochs = 10;
  fo.optimizer.learning_rate = 1e-3;
  fo.seed = 3;
  auto pfm = finetune(plm, task, spec, fo).model;
  auto prompt = resolve_prompt(spec, plm.vocab);
  auto test = encode_examples(plm.vocab, task.split(Split::kTest), prompt);
  auto train = encode_examples(plm.vocab, task.split(Split::kTrain), prompt);

  MaskedDatasetOptions mo;
  mo.n_examples = 256;
  mo.seed = 4;
  auto dataset = make_masked_dataset(corpus, plm.vocab, mo).examples;
  const double t = seconds_since(start);
  return {std::move(corpus), std::move(plm), std::move(pfm), std::move(prompt), std::move(test), std::move(train),
          std::move(dataset), t};
}

constexpr int kSeeds = 5;

struct Searched {
  std::vector<Trigger> triggers;  // one per seed
  double seconds = 0;
};

Searched search_all(const ToyWorld& w, double alpha) {
  const auto start = Clock::now();
  Searched s;
  for (int seed = 0; seed < kSeeds; ++seed) {
    SearchConfig c;
    c.trigger_length = 3;
    c.steps = 2;
    c.alpha = alpha;
    c.seed = std::uint64_t(10 + seed);
    s.triggers.push_back(beam_search(w.plm, w.dataset, c).beam.front());
  }
  s.seconds = seconds_since(start);
  return s;
}

std::string words(const Vocabulary& v, const TokenIds& ids) {
  std::string out;
  for (const auto& s : v.to_strings(ids)) out += (out.empty() ? "" : " ") + s;
  return out;
}

Outcome effectiveness(const ToyWorld& w, const Searched& searched, double setup_seconds) {
  const auto start = Clock::now();
  const double acc = accuracy(w.pfm, w.test, w.prompt);
  std::vector<double> found, random;
  for (int seed = 0; seed < kSeeds; ++seed) {
    found.push_back(attack_success_rate(w.pfm, w.test, w.prompt, searched.triggers[seed].token_ids));
    const auto r = random_trigger(w.plm.vocab, 3, std::uint64_t(100 + seed)).token_ids;
    random.push_back(attack_success_rate(w.pfm, w.test, w.prompt, r));
  }
  const double t = setup_seconds + searched.seconds + seconds_since(start);
  const double gap = median(found) - median(random);
  return {acc >= 0.9 && gap >= 0.2 && t < 300,
          fmt("clean acc %.3f, median ASR searched %.3f random %.3f (gap %+.3f), %.0fs incl. pre-training", acc,
              median(found), median(random), gap, t)};
}

Outcome naturalness(const ToyWorld& w, const std::map<double, Searched>& by_alpha) {
  std::vector<double> sem, sss;
  for (const auto& [alpha, s] : by_alpha) {
    std::vector<double> a, b;
    for (const auto& t : s.triggers) {
      a.push_back(t.sem_loss);
      b.push_back(sss_of_attack(w.plm, w.test, t.token_ids).mean);
    }
    sem.push_back(median(a));
    sss.push_back(median(b));
  }
  const bool sem_ok = sem[1] <= sem[0] && sem[2] <= sem[1];
  const bool sss_ok = sss[2] >= sss[0];
  return {sem_ok && sss_ok, fmt("median sem a=0/0.05/1: %.3f %.3f %.3f; median SSS a=0 %.4f a=1 %.4f", sem[0], sem[1],
                                sem[2], sss[0], sss[2])};
}

Outcome defense(const ToyWorld& w, const Searched& plain, const Searched& natural) {
  const MlmPerplexityScorer scorer(w.plm.lm);
  const std::span<const EvalExample> calibration(w.train.data(), 64);
  FilterConfig fc;
  fc.scorer = &scorer;
  fc.threshold = calibrate_threshold(scorer, calibration);

  auto run = [&](const Searched& s, std::vector<double>& before, std::vector<double>& delta,
                 std::vector<double>& dacc) {
    for (const auto& t : s.triggers) {
      const auto d = evaluate_defense(w.pfm, w.test, w.prompt, t.token_ids, fc);
      before.push_back(d.asr_before);
      delta.push_back(d.delta_asr());
      dacc.push_back(d.delta_acc());
    }
  };
  std::vector<double> before0, delta0, dacc0, before5, delta5, dacc5;
  run(plain, before0, delta0, dacc0);
  run(natural, before5, delta5, dacc5);
  std::vector<double> dacc = dacc0;
  dacc.insert(dacc.end(), dacc5.begin(), dacc5.end());
  const double worst_cost = -*std::min_element(dacc.begin(), dacc.end());

  const bool direction = median(delta0) <= median(delta5);
  const bool matched = std::abs(median(before0) - median(before5)) <= 0.1;
  const bool cheap = worst_cost < 0.1;
  return {direction && matched && cheap,
          fmt("threshold %.3f; median dASR a=0 %+.3f a=0.05 %+.3f; pre-filter ASR %.3f vs %.3f; max clean-ACC cost "
              "%.3f",
              fc.threshold, median(delta0), median(delta5), median(before0), median(before5), worst_cost)};
}

// ---- 7: metric formulas ---------------------------------------------------

Outcome metric_formulas() {
  const std::vector<double> u = {0.3, -1.2, 2.0}, v = {0.6, -2.4, 4.0}, anti = {-0.3, 1.2, -2.0};
  const std::vector<double> a = {1.0, 0.0, 0.0}, b = {0.0, 2.5, 0.0};
  const double par = angular_similarity(u, v), ort = angular_similarity(a, b), opp = angular_similarity(u, anti);
  const bool sim_ok = std::abs(par - 1) < 1e-6 && std::abs(ort - 0.5) < 1e-6 && std::abs(opp) < 1e-6;

  const std::vector<std::size_t> labels = {0, 1, 1, 0, 1, 0, 0, 1, 1, 0};
  const std::vector<std::size_t> clean = {0, 1, 0, 0, 1, 1, 0, 1, 0, 0};
  const std::vector<std::size_t> triggered = {1, 1, 1, 0, 0, 0, 1, 1, 0, 0};
  const double acc = accuracy_from_predictions(clean, labels);
  const double asr = asr_from_predictions(clean, triggered, labels);
  const bool fixtures_ok = acc == 0.7 && asr == 3.0 / 7.0;
  return {sim_ok && fixtures_ok, fmt("angular %.7f %.7f %.7f; ACC %.4f (want 0.7) ASR %.4f (want 3/7)", par, ort, opp,
                                     acc, asr)};
}

// ---- 9: reproducibility ---------------------------------------------------

Outcome reproducibility() {
  testing::CliWorkspace ws("acceptance");
  std::string error;
  if (!ws.build_pipeline(error)) return {false, error};
  std::vector<std::string> mismatches;
  auto twice = [&](std::vector<std::string> args, const std::string& out, bool json_report) {
    const std::string first = ws.str(out + ".1"), second = ws.str(out + ".2");
    auto a = args, b = args;
    a.insert(a.end(), {"--out", first});
    b.insert(b.end(), {"--out", second});
    if (testing::run_cli(a).code != 0 || testing::run_cli(b).code != 0) {
      mismatches.push_back(args.front() + " failed");
      return;
    }
    const bool same = json_report ? cli::strip_timing(testing::read_json(first)).dump() ==
                                        cli::strip_timing(testing::read_json(second)).dump()
                                  : testing::slurp(first) == testing::slurp(second);
    if (!same) mismatches.push_back(args.front());
  };
  const std::string pfm = "pfm=" + ws.str("pfm.ckpt");
  twice({"train-mlm", "--config", ws.str("plm.json")}, "plm", false);
  twice({"finetune", "--config", ws.str("pfm.json")}, "pfm", false);
  twice({"search", "--config", ws.str("search.json")}, "search", true);
  twice({"attack", "--set", pfm, "--set", "trigger.random_length=3", "--set", "task.n_test=20"}, "attack", true);
  twice({"defend", "--set", pfm, "--set", "trigger.random_length=3", "--set", "task.n_test=20", "--set",
         "defense.calibration_examples=16"},
        "defend", true);

  const auto model = load_checkpoint(ws.path("plm.ckpt"));
  save_checkpoint(model, ws.path("resaved.ckpt"));
  const bool round_trip = testing::slurp(ws.path("plm.ckpt")) == testing::slurp(ws.path("resaved.ckpt"));
  std::string detail = "5 commands run twice";
  for (const auto& m : mismatches) detail += "; differs: " + m;
  detail += round_trip ? "; checkpoint round trip identical" : "; checkpoint round trip differs";
  return {mismatches.empty() && round_trip, detail};
}

}  // namespace

int main() {
  report(1, "autodiff", autodiff());
  report(2, "exhaustive-oracle", exhaustive_oracle());
  report(3, "loss-decomposition", loss_ranges());
  report(4, "frozen-monotonicity", monotone());

  const ToyWorld w = build_toy_world();
  std::map<double, Searched> by_alpha;
  for (double alpha : {0.0, 0.05, 1.0}) by_alpha[alpha] = search_all(w, alpha);
  for (const auto& [alpha, s] : by_alpha) {
    std::printf("  alpha %.2f triggers:", alpha);
    for (const auto& t : s.triggers) std::printf(" [%s]", words(w.plm.vocab, t.token_ids).c_str());
    std::printf("  (%.0fs)\n", s.seconds);
  }
  report(5, "attack-effectiveness", effectiveness(w, by_alpha.at(0.0), w.setup_seconds));
  report(6, "naturalness-tradeoff", naturalness(w, by_alpha));
  report(7, "metric-formulas", metric_formulas());
  report(8, "defense-direction", defense(w, by_alpha.at(0.0), by_alpha.at(0.05)));
  report(9, "reproducibility", reproducibility());

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
