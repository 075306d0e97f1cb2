#pragma once

// Natural universal-trigger search against a masked LM.
//
// Objective for a trigger t on masked examples {(x', y)}:
//   adv(t)  = -(1/M) sum CE(F(x' with t before [mask]), y)        (<= 0)
//   sem(t)  = -(1/(L-1)) sum_{i>=2} F(t_i | t_1..t_{i-1})          (in [-1, 0])
//   loss(t) = adv(t) + alpha * sem(t)
// Candidates come from first-order token-swap scores on the gradient of the
// full loss, then a beam keeps the lowest true-loss triggers.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/corpus.hpp"
#include "uat/mlm.hpp"

namespace uat {

inline constexpr std::size_t kDefaultBeamSize = 5;
inline constexpr std::size_t kDefaultSearchBatch = 16;
inline constexpr std::size_t kDefaultCandidates = 10;
inline constexpr double kDefaultAlpha = 0.05;
inline constexpr std::size_t kDefaultMaskedExamples = 512;
inline constexpr std::array<double, 8> kAlphaGrid = {0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1};
inline constexpr std::array<std::size_t, 3> kTriggerLengths = {3, 5, 7};

struct SearchConfig {
  std::size_t trigger_length = 5;
  std::size_t steps = 1;
  std::size_t batch_size = kDefaultSearchBatch;
  double alpha = kDefaultAlpha;
  std::size_t candidate_size = kDefaultCandidates;
  std::size_t beam_size = kDefaultBeamSize;
  std::uint64_t seed = 0;
  ContextMode sem_context = ContextMode::kLeftOnly;
  // Reuse the first sampled batch at every step.
  bool frozen_batch = false;
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct LossParts {
  double adv = 0;
  double sem = 0;
  double combined = 0;
};

struct Trigger {
  TokenIds token_ids;
  double loss = 0;
  double adv_loss = 0;
  double sem_loss = 0;
  bool evaluated = false;
  std::vector<double> history;
};

struct SearchResult {
  std::vector<Trigger> beam;  // ascending by loss
  Trigger initial;
  // Best beam loss at the start of each step and after every position update.
  std::vector<double> position_trace;
  // Best beam loss at the end of each step.
  std::vector<double> step_trace;
  std::size_t loss_evaluations = 0;
};

// Closed forms of the two objectives, given per-example log-probabilities of
// the gold token and per-position conditional probabilities.
double adv_loss_from_log_probs(std::span<const double> gold_log_probs);
double sem_loss_from_probs(std::span<const double> conditional_probs);

double adv_loss(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                std::span<const TokenId> trigger);
// Conditional probabilities F(t_i | context) for i = 2..L.
std::vector<double> trigger_conditionals(const MaskedLm<float>& lm, std::span<const TokenId> trigger,
                                         ContextMode mode);
// Zero for triggers shorter than two tokens.
double sem_loss(const MaskedLm<float>& lm, std::span<const TokenId> trigger, ContextMode mode);
double combined_loss(double adv, double sem, double alpha);

LossParts evaluate_trigger(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                           std::span<const TokenId> trigger, double alpha, ContextMode mode);

struct LossGradient {
  LossParts loss;
  std::vector<float> grad;  // L x d_model, d loss / d(trigger word embeddings)
};

LossGradient trigger_gradient(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                              std::span<const TokenId> trigger, double alpha, ContextMode mode);

// omega_w = -<grad, e_w - e_current> for every vocabulary word; specials get -inf.
std::vector<double> hotflip_scores_from_gradient(const MaskedLm<float>& lm, std::span<const float> grad_row,
                                                 TokenId current);
// Scores for swapping position k (0-based) of the trigger.
std::vector<double> hotflip_scores(const MaskedLm<float>& lm, std::span<const MaskedExample> batch,
                                   std::span<const TokenId> trigger, std::size_t k, double alpha,
                                   ContextMode mode);
// Indices of the top `count` finite scores, descending, ties to the lower id.
std::vector<TokenId> top_candidates(std::span<const double> scores, std::size_t count);

SearchResult beam_search(const MlmModel& plm, std::span<const MaskedExample> dataset, const SearchConfig& config);

// Beam, initial trigger and traces with token strings resolved.
nlohmann::json search_result_to_json(const SearchResult& result, const Vocabulary& vocab);

// Uniform over non-special tokens.
Trigger random_trigger(const Vocabulary& vocab, std::size_t length, std::uint64_t seed);

}  // namespace uat
