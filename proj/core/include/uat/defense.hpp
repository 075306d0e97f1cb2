#pragma once

// Perplexity-based outlier-word filter and its effect on an attack.
// A word is suspicious when deleting it lowers the pseudo-perplexity of the
// user-supplied text; the prompt template is never touched.

#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/eval.hpp"
#include "uat/mlm.hpp"
#include "uat/prompt.hpp"

namespace uat {

class PerplexityScorer {
 public:
  virtual ~PerplexityScorer() = default;
  virtual double perplexity(std::span<const TokenId> tokens) const = 0;
  virtual std::string name() const = 0;
};

// Mask-one-out pseudo-perplexity under a masked LM.
class MlmPerplexityScorer final : public PerplexityScorer {
 public:
  explicit MlmPerplexityScorer(const MaskedLm<float>& lm) : lm_(lm) {}
  double perplexity(std::span<const TokenId> tokens) const override;
  std::string name() const override { return "mlm_pseudo_perplexity"; }

 private:
  const MaskedLm<float>& lm_;
};

// score_i = P(tokens) - P(tokens without i). Needs at least two tokens.
std::vector<double> suspicion_scores(const PerplexityScorer& scorer, std::span<const TokenId> tokens,
                                     std::size_t threads = 1);

// Positions with score > threshold, excluding [mask] tokens.
std::vector<bool> removal_mask(std::span<const double> scores, std::span<const TokenId> tokens, double threshold);

struct FilterConfig {
  double threshold = std::numeric_limits<double>::infinity();
  const PerplexityScorer* scorer = nullptr;
  std::size_t threads = 1;

  void validate() const;
};

struct FilterOutcome {
  TokenIds tokens;
  std::vector<bool> removed;  // per original position
};

// Single pass over the original scores. Inputs shorter than two tokens pass through.
FilterOutcome filter_tokens(std::span<const TokenId> tokens, const FilterConfig& config);
TokenIds filter_sentence(std::span<const TokenId> tokens, const FilterConfig& config);

inline constexpr double kCleanRemovalBudget = 0.05;

// Smallest threshold that removes fewer than `budget` of the tokens of the
// clean sentences.
double calibrate_threshold(const PerplexityScorer& scorer, std::span<const EvalExample> clean,
                           double budget = kCleanRemovalBudget, std::size_t threads = 1);
// Same rule on precomputed scores.
double threshold_from_scores(std::vector<double> scores, double budget = kCleanRemovalBudget);

struct DefenseReport {
  std::string task;
  std::vector<std::string> trigger;
  TokenIds trigger_ids;
  double alpha = 0;
  double threshold = 0;
  double asr_before = 0;
  double asr_after = 0;
  double acc_before = 0;
  double acc_after = 0;
  double trigger_removal_rate = 0;  // share of injected trigger tokens removed
  double clean_removal_rate = 0;    // share of clean tokens removed
  std::size_t n_eval = 0;
  std::uint64_t seed = 0;

  double delta_asr() const { return asr_after - asr_before; }
  double delta_acc() const { return acc_after - acc_before; }
  nlohmann::json to_json() const;
};

// Before: ASR over clean-correct examples, ACC on clean inputs. After: both
// sides filtered; ASR over examples whose filtered clean input is correct.
DefenseReport evaluate_defense(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                               std::span<const TokenId> trigger, const FilterConfig& config);

// trigger,alpha,threshold,asr_before,asr_after,acc_before,acc_after,trigger_removal_rate
std::string defense_csv(std::span<const DefenseReport> reports);

}  // namespace uat
