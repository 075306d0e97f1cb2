#include "uat/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "uat/error.hpp"
#include "uat/rng.hpp"

namespace uat {

namespace {

constexpr std::string_view kSentenceSlot = "{sen}";

std::string_view kind_name(TemplateKind k) { return k == TemplateKind::kNull ? "null" : "manual"; }

}  // namespace

// ---- PromptSpec -----------------------------------------------------------

PromptSpec PromptSpec::from_json(const nlohmann::json& j) {
  PromptSpec p;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "null") {
    p.kind = TemplateKind::kNull;
  } else if (kind == "manual") {
    p.kind = TemplateKind::kManual;
  } else {
    throw Error(ErrorCode::kConfig, "prompt.kind: expected 'null' or 'manual', got '" + kind + "'");
  }
  p.template_text = j.at("template").get<std::string>();
  const auto& verb = j.at("verbalizer");
  if (verb.is_object()) {
    for (const auto& [label, word] : verb.items()) p.verbalizer.emplace_back(label, word.get<std::string>());
  } else if (verb.is_array()) {
    for (const auto& pair : verb) p.verbalizer.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
  } else {
    throw Error(ErrorCode::kConfig, "prompt.verbalizer: expected object or array of pairs");
  }
  return p;
}

nlohmann::json PromptSpec::to_json() const {
  nlohmann::json verb = nlohmann::json::array();
  for (const auto& [label, word] : verbalizer) verb.push_back({label, word});
  return {{"kind", kind_name(kind)}, {"template", template_text}, {"verbalizer", verb}};
}

std::vector<std::string> PromptSpec::labels() const {
  std::vector<std::string> out;
  for (const auto& [label, word] : verbalizer) out.push_back(label);
  return out;
}

ResolvedPrompt resolve_prompt(const PromptSpec& spec, const Vocabulary& vocab) {
  const auto at = spec.template_text.find(kSentenceSlot);
  if (at == std::string::npos || spec.template_text.find(kSentenceSlot, at + 1) != std::string::npos) {
    throw Error(ErrorCode::kConfig, "prompt template must contain exactly one {sen} slot");
  }
  ResolvedPrompt r;
  r.spec = spec;
  r.layout.prefix = vocab.encode(spec.template_text.substr(0, at));
  r.layout.suffix = vocab.encode(spec.template_text.substr(at + kSentenceSlot.size()));
  if (std::count(r.layout.prefix.begin(), r.layout.prefix.end(), kMaskId) != 0 ||
      std::count(r.layout.suffix.begin(), r.layout.suffix.end(), kMaskId) != 1) {
    throw Error(ErrorCode::kConfig, "prompt template must contain exactly one [mask] after {sen}");
  }
  if (spec.verbalizer.size() < 2) throw Error(ErrorCode::kConfig, "verbalizer needs at least two classes");
  std::set<TokenId> seen;
  std::set<std::string> labels;
  for (const auto& [label, word] : spec.verbalizer) {
    if (!vocab.contains(word)) throw Error(ErrorCode::kConfig, "verbalizer word '" + word + "' is not in the vocabulary");
    const TokenId id = vocab.id(word);
    if (Vocabulary::is_special(id)) throw Error(ErrorCode::kConfig, "verbalizer word '" + word + "' is a special token");
    if (!seen.insert(id).second) throw Error(ErrorCode::kConfig, "verbalizer is not injective: '" + word + "' repeats");
    if (!labels.insert(label).second) throw Error(ErrorCode::kConfig, "verbalizer label '" + label + "' repeats");
    r.verbalizer_ids.push_back(id);
  }
  return r;
}

// ---- TaskDataset ----------------------------------------------------------

std::vector<LabeledText> TaskDataset::split(Split s) const {
  std::vector<LabeledText> out;
  std::copy_if(examples.begin(), examples.end(), std::back_inserter(out),
               [s](const LabeledText& e) { return e.split == s; });
  return out;
}

std::size_t TaskDataset::class_index(const std::string& label) const {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw Error(ErrorCode::kInvalidArgument, "label '" + label + "' not in class list");
  return static_cast<std::size_t>(it - classes.begin());
}

void TaskDataset::validate() const {
  for (const auto& e : examples) class_index(e.label);
}

TaskDataset load_task_jsonl(const std::filesystem::path& path, std::string name) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  TaskDataset task;
  task.name = name.empty() ? path.stem().string() : std::move(name);
  std::set<std::string> classes;
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      LabeledText ex{j.at("text").get<std::string>(), j.at("label").get<std::string>()};
      if (j.contains("split")) ex.split = j.at("split").get<std::string>() == "test" ? Split::kTest : Split::kTrain;
      classes.insert(ex.label);
      task.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  task.classes.assign(classes.begin(), classes.end());
  return task;
}

std::string task_to_jsonl(const TaskDataset& task) {
  std::string out;
  for (const auto& e : task.examples) {
    nlohmann::json j = {{"text", e.text}, {"label", e.label}, {"split", e.split == Split::kTest ? "test" : "train"}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

// ---- classification -------------------------------------------------------

Classification pick_class(std::span<const double> verbalizer_probs) {
  Classification c;
  const double total = std::accumulate(verbalizer_probs.begin(), verbalizer_probs.end(), 0.0);
  c.class_probs.reserve(verbalizer_probs.size());
  for (double p : verbalizer_probs) c.class_probs.push_back(total > 0 ? p / total : 1.0 / double(verbalizer_probs.size()));
  for (std::size_t i = 1; i < verbalizer_probs.size(); ++i)
    if (verbalizer_probs[i] > verbalizer_probs[c.predicted]) c.predicted = i;
  return c;
}

Classification classify_tokens(const MlmModel& pfm, std::span<const TokenId> sentence,
                               const ResolvedPrompt& prompt, std::span<const TokenId> trigger) {
  AssembledInput in = assemble_phase2(sentence, trigger, prompt.layout, pfm.config().max_seq_len);
  auto probs = pfm.lm.predict_mask(in.tokens, in.mask_pos);
  std::vector<double> verb;
  verb.reserve(prompt.num_classes());
  for (TokenId id : prompt.verbalizer_ids) verb.push_back(probs[id]);
  return pick_class(verb);
}

Classification classify(const MlmModel& pfm, const std::string& text, const ResolvedPrompt& prompt,
                        std::span<const TokenId> trigger) {
  return classify_tokens(pfm, pfm.vocab.encode(text), prompt, trigger);
}

// ---- fine-tuning ----------------------------------------------------------

FinetuneResult finetune(const MlmModel& base, const TaskDataset& task, const PromptSpec& prompt,
                        const FinetuneOptions& options) {
  const ResolvedPrompt resolved = resolve_prompt(prompt, base.vocab);
  const auto labels = prompt.labels();
  const auto train = task.split(Split::kTrain);
  if (options.shots == 0) throw Error(ErrorCode::kInvalidArgument, "finetune: shots must be positive");
  if (options.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "finetune: batch_size must be positive");
  if (options.shots * labels.size() > train.size()) {
    throw Error(ErrorCode::kInvalidArgument, "finetune: " + std::to_string(options.shots) + " shots x " +
                                                 std::to_string(labels.size()) + " classes exceeds " +
                                                 std::to_string(train.size()) + " training examples");
  }

  Rng rng = make_rng(options.seed, "finetune");
  struct Shot {
    TokenIds sentence;
    std::size_t target;
  };
  std::vector<Shot> shots;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    std::vector<const LabeledText*> pool;
    for (const auto& e : train)
      if (e.label == labels[c]) pool.push_back(&e);
    if (pool.empty()) throw Error(ErrorCode::kInvalidArgument, "finetune: class '" + labels[c] + "' has no training examples");
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t take = std::min(options.shots, pool.size());
    for (std::size_t i = 0; i < take; ++i) shots.push_back({base.vocab.encode(pool[i]->text), resolved.verbalizer_ids[c]});
  }

  FinetuneResult result{MlmModel(base.vocab, base.lm), {}, shots.size()};
  MaskedLm<float>& lm = result.model.lm;
  lm.set_trainable(true);
  std::vector<Tensor<float>> params;
  for (auto& [n, t] : lm.parameters()) params.push_back(t);
  AdamW opt(params, options.optimizer);
  const Tensor<float>& table = lm.parameters()[0].second;

  std::vector<std::size_t> order(shots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      for (std::size_t b = start; b < stop; ++b) {
        const Shot& s = shots[order[b]];
        AssembledInput in = assemble_phase2(s.sentence, {}, resolved.layout, lm.config().max_seq_len);
        std::vector<std::size_t> rows(in.tokens.begin(), in.tokens.end());
        Tensor<float> emb = gather_rows(table, std::span<const std::size_t>(rows));
        const std::size_t mrow = in.mask_pos;
        Tensor<float> logits = lm.logits_at(lm.hidden_states(emb, in.tokens), std::span<const std::size_t>(&mrow, 1));
        Tensor<float> ce = cross_entropy(logits, std::span<const std::size_t>(&s.target, 1));
        Tensor<float> loss = scale(ce, 1.0f / float(stop - start));
        backward(loss);
        epoch_loss += ce.item();
      }
      opt.step();
      opt.zero_grad();
    }
    const double mean_loss = epoch_loss / double(shots.size());
    if (!std::isfinite(mean_loss)) {
      lm.set_trainable(false);
      throw Error(ErrorCode::kDivergence, "finetune: loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.epoch_losses.push_back(mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  lm.set_trainable(false);

  result.model.metadata = {{"objective", "prompt_finetune"},
                           {"task", task.name},
                           {"prompt", prompt.to_json()},
                           {"shots_per_class", options.shots},
                           {"shots_used", shots.size()},
                           {"epochs", options.epochs},
                           {"batch_size", options.batch_size},
                           {"learning_rate", options.optimizer.learning_rate},
                           {"weight_decay", options.optimizer.weight_decay},
                           {"seed", options.seed},
                           {"epoch_losses", result.epoch_losses},
                           {"base", base.metadata}};
  return result;
}

}  // namespace uat
