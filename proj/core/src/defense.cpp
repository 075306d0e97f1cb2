#include "uat/defense.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "uat/error.hpp"
#include "uat/parallel.hpp"

namespace uat {

double MlmPerplexityScorer::perplexity(std::span<const TokenId> tokens) const {
  const std::size_t cap = lm_.config().max_seq_len;
  return lm_.pseudo_perplexity(tokens.size() > cap ? tokens.last(cap) : tokens);
}

std::vector<double> suspicion_scores(const PerplexityScorer& scorer, std::span<const TokenId> tokens,
                                     std::size_t threads) {
  if (tokens.size() < 2) throw Error(ErrorCode::kInvalidArgument, "suspicion_scores: need at least two tokens");
  const double full = scorer.perplexity(tokens);
  std::vector<double> scores(tokens.size());
  parallel_for(tokens.size(), threads, [&](std::size_t i) {
    TokenIds without(tokens.begin(), tokens.end());
    without.erase(without.begin() + static_cast<std::ptrdiff_t>(i));
    scores[i] = full - scorer.perplexity(without);
  });
  return scores;
}

std::vector<bool> removal_mask(std::span<const double> scores, std::span<const TokenId> tokens, double threshold) {
  if (scores.size() != tokens.size()) throw Error(ErrorCode::kShapeMismatch, "removal_mask: scores and tokens differ in length");
  std::vector<bool> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = tokens[i] != kMaskId && scores[i] > threshold;
  return out;
}

void FilterConfig::validate() const {
  if (std::isnan(threshold)) throw Error(ErrorCode::kInvalidArgument, "FilterConfig: threshold is NaN");
  if (scorer == nullptr) throw Error(ErrorCode::kInvalidArgument, "FilterConfig: no scorer");
}

FilterOutcome filter_tokens(std::span<const TokenId> tokens, const FilterConfig& config) {
  config.validate();
  FilterOutcome out;
  out.removed.assign(tokens.size(), false);
  if (tokens.size() < 2 || config.threshold == std::numeric_limits<double>::infinity()) {
    out.tokens.assign(tokens.begin(), tokens.end());
    return out;
  }
  out.removed = removal_mask(suspicion_scores(*config.scorer, tokens, config.threads), tokens, config.threshold);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!out.removed[i]) out.tokens.push_back(tokens[i]);
  return out;
}

TokenIds filter_sentence(std::span<const TokenId> tokens, const FilterConfig& config) {
  return filter_tokens(tokens, config).tokens;
}

double threshold_from_scores(std::vector<double> scores, double budget) {
  if (scores.empty()) throw Error(ErrorCode::kEmptyInput, "calibrate_threshold: no clean tokens to score");
  if (!(budget > 0 && budget <= 1)) throw Error(ErrorCode::kInvalidArgument, "calibrate_threshold: budget must be in (0, 1]");
  std::sort(scores.begin(), scores.end(), std::greater<>());
  // Largest removal count r with r < budget * n; removing exactly the scores
  // strictly above scores[r] stays within it.
  const double n = double(scores.size());
  std::size_t r = static_cast<std::size_t>(std::ceil(budget * n)) - 1;
  r = std::min(r, scores.size() - 1);
  return scores[r];
}

double calibrate_threshold(const PerplexityScorer& scorer, std::span<const EvalExample> clean, double budget,
                           std::size_t threads) {
  std::vector<std::vector<double>> per(clean.size());
  parallel_for(clean.size(), threads, [&](std::size_t i) {
    if (clean[i].sentence.size() >= 2) per[i] = suspicion_scores(scorer, clean[i].sentence);
  });
  std::vector<double> all;
  for (const auto& s : per) all.insert(all.end(), s.begin(), s.end());
  return threshold_from_scores(std::move(all), budget);
}

nlohmann::json DefenseReport::to_json() const {
  return {{"task", task},
          {"trigger", trigger},
          {"trigger_ids", trigger_ids},
          {"alpha", alpha},
          {"threshold", threshold},
          {"asr_before", asr_before},
          {"asr_after", asr_after},
          {"delta_asr", delta_asr()},
          {"acc_before", acc_before},
          {"acc_after", acc_after},
          {"delta_acc", delta_acc()},
          {"trigger_removal_rate", trigger_removal_rate},
          {"clean_removal_rate", clean_removal_rate},
          {"n_eval", n_eval},
          {"seed", seed}};
}

DefenseReport evaluate_defense(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                               std::span<const TokenId> trigger, const FilterConfig& config) {
  config.validate();
  if (test.empty()) throw Error(ErrorCode::kEmptyInput, "evaluate_defense: empty test set");
  const std::size_t n = test.size();
  std::vector<std::size_t> labels(n), clean(n), attacked(n), clean_f(n), attacked_f(n);
  std::vector<std::size_t> clean_removed(n), clean_total(n), trig_removed(n);

  FilterConfig inner = config;
  inner.threads = 1;
  parallel_for(n, config.threads, [&](std::size_t i) {
    const TokenIds& s = test[i].sentence;
    labels[i] = test[i].label;
    TokenIds injected = s;
    injected.insert(injected.end(), trigger.begin(), trigger.end());

    clean[i] = classify_tokens(pfm, s, prompt).predicted;
    attacked[i] = classify_tokens(pfm, injected, prompt).predicted;

    const FilterOutcome fc = filter_tokens(s, inner);
    clean_f[i] = classify_tokens(pfm, fc.tokens, prompt).predicted;
    clean_total[i] = s.size();
    clean_removed[i] = static_cast<std::size_t>(std::count(fc.removed.begin(), fc.removed.end(), true));

    if (trigger.empty()) {
      attacked_f[i] = clean_f[i];
      return;
    }
    const FilterOutcome fa = filter_tokens(injected, inner);
    attacked_f[i] = classify_tokens(pfm, fa.tokens, prompt).predicted;
    trig_removed[i] = static_cast<std::size_t>(std::count(fa.removed.begin() + static_cast<std::ptrdiff_t>(s.size()),
                                                          fa.removed.end(), true));
  });

  DefenseReport r;
  r.trigger = pfm.vocab.to_strings(trigger);
  r.trigger_ids.assign(trigger.begin(), trigger.end());
  r.threshold = config.threshold;
  r.n_eval = n;
  r.acc_before = accuracy_from_predictions(clean, labels);
  r.acc_after = accuracy_from_predictions(clean_f, labels);
  r.asr_before = asr_from_predictions(clean, attacked, labels);
  r.asr_after = asr_from_predictions(clean_f, attacked_f, labels);

  std::size_t cr = 0, ct = 0, tr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cr += clean_removed[i];
    ct += clean_total[i];
    tr += trig_removed[i];
  }
  r.clean_removal_rate = ct == 0 ? 0.0 : double(cr) / double(ct);
  r.trigger_removal_rate = trigger.empty() ? 0.0 : double(tr) / double(n * trigger.size());
  return r;
}

std::string defense_csv(std::span<const DefenseReport> reports) {
  std::ostringstream os;
  os.precision(17);
  os << "trigger,alpha,threshold,asr_before,asr_after,acc_before,acc_after,trigger_removal_rate\n";
  for (const auto& r : reports) {
    std::string words;
    for (const auto& w : r.trigger) words += (words.empty() ? "" : " ") + w;
    std::string quoted = "\"";
    for (char c : words) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
    os << quoted << "\"," << r.alpha << ',' << r.threshold << ',' << r.asr_before << ',' << r.asr_after << ','
       << r.acc_before << ',' << r.acc_after << ',' << r.trigger_removal_rate << '\n';
  }
  return os.str();
}

}  // namespace uat
