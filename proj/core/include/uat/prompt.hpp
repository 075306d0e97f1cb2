#pragma once

// Prompt-based fine-tuning: templates, verbalizers, few-shot training of a
// masked LM into a prompt-based classifier, and verbalizer-restricted
// classification.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/corpus.hpp"
#include "uat/mlm.hpp"
#include "uat/optim.hpp"

namespace uat {

enum class TemplateKind { kNull, kManual };

// A template string such as "{sen} It was [mask] ." plus a label -> word map.
// The trigger goes right after {sen}.
struct PromptSpec {
  TemplateKind kind = TemplateKind::kNull;
  std::string template_text = "{sen} [mask]";
  // Ordered label -> verbalizer word; order defines the class index.
  std::vector<std::pair<std::string, std::string>> verbalizer;

  static PromptSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  std::vector<std::string> labels() const;
};

// PromptSpec resolved against a vocabulary.
struct ResolvedPrompt {
  PromptSpec spec;
  TemplateLayout layout;
  std::vector<TokenId> verbalizer_ids;  // index = class index

  std::size_t num_classes() const { return verbalizer_ids.size(); }
};

// Validates: one {sen}, one [mask] after it, injective in-vocab verbalizer.
ResolvedPrompt resolve_prompt(const PromptSpec& spec, const Vocabulary& vocab);

enum class Split { kTrain, kTest };

struct LabeledText {
  std::string text;
  std::string label;
  Split split = Split::kTrain;
};

struct TaskDataset {
  std::string name;
  std::vector<std::string> classes;
  std::vector<LabeledText> examples;

  std::vector<LabeledText> split(Split s) const;
  std::size_t class_index(const std::string& label) const;
  void validate() const;
};

// JSON-lines {text, label[, split]}; lines without split count as train.
TaskDataset load_task_jsonl(const std::filesystem::path& path, std::string name = {});
std::string task_to_jsonl(const TaskDataset& task);

inline constexpr std::size_t kDefaultShots = 16;
inline constexpr std::size_t kMisinformationShots = 64;
inline constexpr std::size_t kDefaultFinetuneEpochs = 10;

struct FinetuneOptions {
  std::size_t shots = kDefaultShots;  // per class
  std::size_t epochs = kDefaultFinetuneEpochs;
  std::size_t batch_size = 4;
  AdamWOptions optimizer{};
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct FinetuneResult {
  MlmModel model;
  std::vector<double> epoch_losses;
  std::size_t shots_used = 0;
};

// Trains every weight to put the gold verbalizer token at the mask slot.
FinetuneResult finetune(const MlmModel& base, const TaskDataset& task, const PromptSpec& prompt,
                        const FinetuneOptions& options);

struct Classification {
  std::size_t predicted = 0;
  std::vector<double> class_probs;  // renormalized over verbalizer tokens
};

// Reads predict_mask at the verbalizer ids, renormalizes, argmax (lowest
// index on ties).
Classification classify_tokens(const MlmModel& pfm, std::span<const TokenId> sentence,
                               const ResolvedPrompt& prompt, std::span<const TokenId> trigger = {});
Classification classify(const MlmModel& pfm, const std::string& text, const ResolvedPrompt& prompt,
                        std::span<const TokenId> trigger = {});

// Renormalization and tie-break on raw verbalizer probabilities.
Classification pick_class(std::span<const double> verbalizer_probs);

// ---- synthetic tasks ------------------------------------------------------

// "sentiment" (positive/negative), "rumor" (real/fake), "topic" (4 classes).
std::vector<std::string> synthetic_task_names();
TaskDataset synthetic_task(const std::string& name, std::size_t n_train, std::size_t n_test,
                           std::uint64_t seed);
// Null and manual prompts for a synthetic task.
PromptSpec default_prompt(const std::string& task_name, TemplateKind kind);

}  // namespace uat
