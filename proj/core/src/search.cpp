#include "uat/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "uat/error.hpp"
#include "uat/parallel.hpp"
#include "uat/rng.hpp"

namespace uat {

void SearchConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, "SearchConfig: " + m); };
  if (trigger_length < 1) fail("trigger_length must be >= 1");
  if (candidate_size < 1) fail("candidate_size must be >= 1");
  if (beam_size < 1) fail("beam_size must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(alpha >= 0) || !std::isfinite(alpha)) fail("alpha must be finite and >= 0");
}

nlohmann::json SearchConfig::to_json() const {
  return {{"trigger_length", trigger_length}, {"steps", steps},
          {"batch_size", batch_size},         {"alpha", alpha},
          {"candidate_size", candidate_size}, {"beam_size", beam_size},
          {"seed", seed},                     {"sem_context_mode", context_mode_name(sem_context)},
          {"frozen_batch", frozen_batch}};
}

double adv_loss_from_log_probs(std::span<const double> gold_log_probs) {
  if (gold_log_probs.empty()) throw Error(ErrorCode::kEmptyInput, "adv_loss: empty batch");
  return std::accumulate(gold_log_probs.begin(), gold_log_probs.end(), 0.0) / double(gold_log_probs.size());
}

double sem_loss_from_probs(std::span<const double> conditional_probs) {
  if (conditional_probs.empty()) return 0.0;
  return -std::accumulate(conditional_probs.begin(), conditional_probs.end(), 0.0) /
         double(conditional_probs.size());
}

double combined_loss(double adv, double sem, double alpha) { return adv + alpha * sem; }

namespace {

// Input and query position for F(t_i | context), i >= 1 (0-based).
std::pair<TokenIds, std::size_t> conditional_query(std::span<const TokenId> trigger, std::size_t i,
                                                   ContextMode mode, std::size_t max_len) {
  if (mode == ContextMode::kLeftOnly) {
    const std::size_t keep = std::min(i, max_len - 1);
    TokenIds q(trigger.begin() + (i - keep), trigger.begin() + i);
    q.push_back(kMaskId);
    return {q, q.size() - 1};
  }
  TokenIds q(trigger.begin(), trigger.end());
  q[i] = kMaskId;
  return {q, i};
}

std::vector<double> gold_log_probs(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                                   std::span<const TokenId> trigger) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) {
    AssembledInput in = assemble_phase1(ex, trigger, lm.config().max_seq_len);
    out.push_back(lm.token_log_prob(in.tokens, in.mask_pos, ex.label));
  }
  return out;
}

bool trigger_less(const Trigger& a, const Trigger& b) {
  if (a.loss != b.loss) return a.loss < b.loss;
  return a.token_ids < b.token_ids;
}

}  // namespace

double adv_loss(const MaskedLm<float>& lm, std::span<const MaskedExample> batch, std::span<const TokenId> trigger) {
  return adv_loss_from_log_probs(gold_log_probs(lm, batch, trigger));
}

std::vector<double> trigger_conditionals(const MaskedLm<float>& lm, std::span<const TokenId> trigger,
                                         ContextMode mode) {
  std::vector<double> probs;
  for (std::size_t i = 1; i < trigger.size(); ++i) {
    auto [q, pos] = conditional_query(trigger, i, mode, lm.config().max_seq_len);
    probs.push_back(std::exp(lm.token_log_prob(q, pos, trigger[i])));
  }
  return probs;
}

double sem_loss(const MaskedLm<float>& lm, std::span<const TokenId> trigger, ContextMode mode) {
  return sem_loss_from_probs(trigger_conditionals(lm, trigger, mode));
}

LossParts evaluate_trigger(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                           std::span<const TokenId> trigger, double alpha, ContextMode mode) {
  LossParts p;
  p.adv = adv_loss(lm, batch, trigger);
  p.sem = sem_loss(lm, trigger, mode);
  p.combined = combined_loss(p.adv, p.sem, alpha);
  return p;
}

LossGradient trigger_gradient(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                              std::span<const TokenId> trigger, double alpha, ContextMode mode) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "trigger_gradient: empty batch");
  const std::size_t L = trigger.size(), d = lm.config().d_model;
  LossGradient out;
  out.grad.assign(L * d, 0.0f);

  std::vector<double> logps;
  std::vector<float> g;
  const float inv_m = 1.0f / float(batch.size());
  for (const auto& ex : batch) {
    AssembledInput in = assemble_phase1(ex, trigger, lm.config().max_seq_len);
    logps.push_back(lm.token_log_prob(in.tokens, in.mask_pos, ex.label, in.trigger_span, &g));
    // adv = mean log p, so d adv = mean d log p.
    for (std::size_t j = 0; j < L * d; ++j) out.grad[j] += inv_m * g[j];
  }
  out.loss.adv = adv_loss_from_log_probs(logps);

  std::vector<double> probs;
  if (L >= 2) {
    const float sem_scale = -1.0f / float(L - 1);
    for (std::size_t i = 1; i < L; ++i) {
      auto [q, pos] = conditional_query(trigger, i, mode, lm.config().max_seq_len);
      // Query rows that hold trigger tokens, and the trigger index of each.
      const std::size_t first_row = 0;
      const Span span{first_row, mode == ContextMode::kLeftOnly ? pos : q.size()};
      const std::size_t trigger_offset = mode == ContextMode::kLeftOnly ? i - pos : 0;
      const double logp = lm.token_log_prob(q, pos, trigger[i], span, &g);
      const double p = std::exp(logp);
      probs.push_back(p);
      if (alpha == 0) continue;
      const float w = float(alpha) * sem_scale * float(p);  // d p = p d log p
      for (std::size_t r = span.begin; r < span.end; ++r) {
        if (mode == ContextMode::kFull && r == pos) continue;
        const std::size_t row = trigger_offset + r;
        for (std::size_t j = 0; j < d; ++j) out.grad[row * d + j] += w * g[r * d + j];
      }
    }
  }
  out.loss.sem = sem_loss_from_probs(probs);
  out.loss.combined = combined_loss(out.loss.adv, out.loss.sem, alpha);
  return out;
}

std::vector<double> hotflip_scores_from_gradient(const MaskedLm<float>& lm, std::span<const float> grad_row,
                                                 TokenId current) {
  const auto& table = lm.parameters()[0].second;
  const std::size_t V = table.rows(), d = table.cols();
  if (grad_row.size() != d) throw Error(ErrorCode::kShapeMismatch, "hotflip_scores: gradient row has wrong width");
  const auto E = table.data();
  std::vector<double> scores(V, -std::numeric_limits<double>::infinity());
  for (std::size_t w = kNumSpecial; w < V; ++w) {
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = double(E[w * d + j]) - double(E[current * d + j]);
      dot += double(grad_row[j]) * diff;
    }
    scores[w] = -dot;
  }
  return scores;
}

std::vector<double> hotflip_scores(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                                   std::span<const TokenId> trigger, std::size_t k, double alpha,
                                   ContextMode mode) {
  if (k >= trigger.size()) throw Error(ErrorCode::kInvalidArgument, "hotflip_scores: position out of range");
  LossGradient lg = trigger_gradient(lm, batch, trigger, alpha, mode);
  const std::size_t d = lm.config().d_model;
  return hotflip_scores_from_gradient(lm, std::span<const float>(lg.grad).subspan(k * d, d), trigger[k]);
}

std::vector<TokenId> top_candidates(std::span<const double> scores, std::size_t count) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (std::isfinite(scores[i])) ids.push_back(static_cast<TokenId>(i));
  const std::size_t take = std::min(count, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(),
                    [&](TokenId a, TokenId b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  ids.resize(take);
  return ids;
}

Trigger random_trigger(const Vocabulary& vocab, std::size_t length, std::uint64_t seed) {
  if (vocab.size() <= kNumSpecial) throw Error(ErrorCode::kInvalidArgument, "random_trigger: vocabulary has no words");
  Rng rng = make_rng(seed, "random_trigger");
  std::uniform_int_distribution<TokenId> dist(static_cast<TokenId>(kNumSpecial),
                                              static_cast<TokenId>(vocab.size() - 1));
  Trigger t;
  for (std::size_t i = 0; i < length; ++i) t.token_ids.push_back(dist(rng));
  return t;
}

SearchResult beam_search(const MlmModel& plm, std::span<const MaskedExample> dataset, const SearchConfig& config) {
  config.validate();
  if (dataset.size() < config.batch_size) {
    throw Error(ErrorCode::kInvalidArgument, "beam_search: batch size " + std::to_string(config.batch_size) +
                                                 " exceeds dataset size " + std::to_string(dataset.size()));
  }
  const MaskedLm<float>& lm = plm.lm;
  const std::size_t L = config.trigger_length, d = lm.config().d_model;
  Rng batch_rng = make_rng(config.seed, "search.batch");

  auto sample_batch = [&] {
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), batch_rng);
    idx.resize(config.batch_size);
    std::sort(idx.begin(), idx.end());
    std::vector<MaskedExample> batch;
    for (std::size_t i : idx) batch.push_back(dataset[i]);
    return batch;
  };

  SearchResult result;
  result.initial = random_trigger(plm.vocab, L, derive_seed(config.seed, "search.init"));
  std::vector<Trigger> beam = {result.initial};

  auto evaluate_pool = [&](std::vector<Trigger>& pool, const std::vector<MaskedExample>& batch) {
    parallel_for(pool.size(), config.threads, [&](std::size_t i) {
      LossParts p = evaluate_trigger(lm, batch, pool[i].token_ids, config.alpha, config.sem_context);
      pool[i].adv_loss = p.adv;
      pool[i].sem_loss = p.sem;
      pool[i].loss = p.combined;
      pool[i].evaluated = true;
    });
    result.loss_evaluations += pool.size();
  };

  std::vector<MaskedExample> batch = sample_batch();
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (step > 0 && !config.frozen_batch) batch = sample_batch();

    // Incumbents are re-scored on this step's batch.
    evaluate_pool(beam, batch);
    std::sort(beam.begin(), beam.end(), trigger_less);
    if (step == 0) result.initial = beam.front();
    result.position_trace.push_back(beam.front().loss);

    for (std::size_t k = 0; k < L; ++k) {
      std::vector<LossGradient> grads(beam.size());
      parallel_for(beam.size(), config.threads, [&](std::size_t b) {
        grads[b] = trigger_gradient(lm, batch, beam[b].token_ids, config.alpha, config.sem_context);
      });

      std::set<TokenIds> seen;
      for (const auto& t : beam) seen.insert(t.token_ids);
      std::vector<Trigger> fresh;
      for (std::size_t b = 0; b < beam.size(); ++b) {
        const auto row = std::span<const float>(grads[b].grad).subspan(k * d, d);
        const auto scores = hotflip_scores_from_gradient(lm, row, beam[b].token_ids[k]);
        for (TokenId c : top_candidates(scores, config.candidate_size)) {
          Trigger cand;
          cand.token_ids = beam[b].token_ids;
          cand.token_ids[k] = c;
          if (seen.insert(cand.token_ids).second) fresh.push_back(std::move(cand));
        }
      }
      evaluate_pool(fresh, batch);

      std::vector<Trigger> pool = std::move(beam);
      pool.insert(pool.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
      std::sort(pool.begin(), pool.end(), trigger_less);
      pool.resize(std::min(pool.size(), config.beam_size));
      beam = std::move(pool);
      result.position_trace.push_back(beam.front().loss);
    }
    result.step_trace.push_back(beam.front().loss);
  }

  if (config.steps == 0) {
    evaluate_pool(beam, batch);
    result.initial = beam.front();
  }
  for (auto& t : beam) t.history = result.step_trace;
  result.beam = std::move(beam);
  return result;
}

nlohmann::json search_result_to_json(const SearchResult& result, const Vocabulary& vocab) {
  auto trigger_json = [&](const Trigger& t) {
    return nlohmann::json{{"tokens", vocab.to_strings(t.token_ids)},
                          {"token_ids", t.token_ids},
                          {"text", vocab.decode(t.token_ids)},
                          {"loss", t.loss},
                          {"adv_loss", t.adv_loss},
                          {"sem_loss", t.sem_loss}};
  };
  nlohmann::json beam = nlohmann::json::array();
  for (const auto& t : result.beam) beam.push_back(trigger_json(t));
  return {{"beam", beam},
          {"initial", trigger_json(result.initial)},
          {"position_trace", result.position_trace},
          {"step_trace", result.step_trace},
          {"loss_evaluations", result.loss_evaluations}};
}

}  // namespace uat
