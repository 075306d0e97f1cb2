#pragma once

// Attack metrics: clean accuracy, attack success rate over the correctly
// classified subset, and angle-based semantic similarity.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/mlm.hpp"
#include "uat/prompt.hpp"

namespace uat {

// A test sentence encoded against a model vocabulary; label is the class
// index in the prompt's verbalizer order.
struct EvalExample {
  TokenIds sentence;
  std::size_t label = 0;
};

std::vector<EvalExample> encode_examples(const Vocabulary& vocab, std::span<const LabeledText> examples,
                                         const ResolvedPrompt& prompt);

// Predicted class per example with `trigger` injected (empty = clean).
std::vector<std::size_t> predict_classes(const MlmModel& pfm, std::span<const EvalExample> examples,
                                         const ResolvedPrompt& prompt, std::span<const TokenId> trigger = {},
                                         std::size_t threads = 1);

double accuracy_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);
// Fraction of the clean-correct subset whose triggered prediction differs
// from the label. Throws kNoCorrectExamples when that subset is empty.
double asr_from_predictions(std::span<const std::size_t> clean, std::span<const std::size_t> triggered,
                            std::span<const std::size_t> labels);

double accuracy(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                std::size_t threads = 1);
double attack_success_rate(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                           std::span<const TokenId> trigger, std::size_t threads = 1);

// 1 - arccos(cos(u, v)) / pi, cosine clamped to [-1, 1]. Zero vectors throw kZeroNorm.
double angular_similarity(std::span<const double> u, std::span<const double> v);
double semantic_similarity(const MlmModel& model, std::span<const TokenId> original,
                           std::span<const TokenId> perturbed);
double semantic_similarity(const MlmModel& model, const std::string& original, const std::string& perturbed);

struct SssStats {
  double mean = 1.0;
  double stddev = 0.0;  // population
  std::vector<double> values;
};

SssStats summarize_sss(std::span<const double> values);
// Similarity between each sentence and the same sentence with the trigger appended.
SssStats sss_of_attack(const MlmModel& model, std::span<const EvalExample> examples, std::span<const TokenId> trigger,
                       std::size_t threads = 1);

struct ExampleRecord {
  std::string text;
  std::size_t label = 0;
  std::size_t clean_prediction = 0;
  std::size_t triggered_prediction = 0;
  double sss = 1.0;
};

struct AttackReport {
  std::string task;
  std::string prompt_kind;
  std::vector<std::string> trigger;
  TokenIds trigger_ids;
  double alpha = 0;
  double acc = 0;
  double asr = 0;
  double sss_mean = 1.0;
  double sss_std = 0;
  std::size_t n_eval = 0;
  std::size_t n_correct = 0;
  std::uint64_t seed = 0;
  std::vector<ExampleRecord> records;

  nlohmann::json to_json() const;
};

struct AttackOptions {
  std::size_t threads = 1;
  bool keep_records = false;
};

// Classifies with `pfm`, embeds with `embedder` (normally the pre-trained LM).
AttackReport evaluate_attack(const MlmModel& pfm, const MlmModel& embedder, const std::string& task_name,
                             std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                             std::span<const TokenId> trigger, const AttackOptions& options = {});

// One CSV row per report: task,prompt,length,alpha,seed,acc,asr,sss_mean,sss_std,trigger
std::string attack_plot_csv(std::span<const AttackReport> reports);

}  // namespace uat
