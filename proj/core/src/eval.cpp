#include "uat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "uat/error.hpp"
#include "uat/parallel.hpp"

namespace uat {

std::vector<EvalExample> encode_examples(const Vocabulary& vocab, std::span<const LabeledText> examples,
                                         const ResolvedPrompt& prompt) {
  const auto labels = prompt.spec.labels();
  std::vector<EvalExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    auto it = std::find(labels.begin(), labels.end(), e.label);
    if (it == labels.end()) throw Error(ErrorCode::kConfig, "label '" + e.label + "' has no verbalizer entry");
    out.push_back({vocab.encode(e.text), static_cast<std::size_t>(it - labels.begin())});
  }
  return out;
}

std::vector<std::size_t> predict_classes(const MlmModel& pfm, std::span<const EvalExample> examples,
                                         const ResolvedPrompt& prompt, std::span<const TokenId> trigger,
                                         std::size_t threads) {
  std::vector<std::size_t> out(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    out[i] = classify_tokens(pfm, examples[i].sentence, prompt, trigger).predicted;
  });
  return out;
}

namespace {

std::vector<std::size_t> labels_of(std::span<const EvalExample> examples) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

void check_sizes(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) + " labels");
  }
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

double accuracy_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  check_sizes(predicted.size(), labels.size(), "accuracy");
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "accuracy: empty test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return double(correct) / double(labels.size());
}

double asr_from_predictions(std::span<const std::size_t> clean, std::span<const std::size_t> triggered,
                            std::span<const std::size_t> labels) {
  check_sizes(clean.size(), labels.size(), "attack_success_rate");
  check_sizes(triggered.size(), labels.size(), "attack_success_rate");
  std::size_t base = 0, flipped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (clean[i] != labels[i]) continue;
    ++base;
    flipped += triggered[i] != labels[i];
  }
  if (base == 0) throw Error(ErrorCode::kNoCorrectExamples, "attack_success_rate: no correctly classified examples");
  return double(flipped) / double(base);
}

double accuracy(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                std::size_t threads) {
  return accuracy_from_predictions(predict_classes(pfm, test, prompt, {}, threads), labels_of(test));
}

double attack_success_rate(const MlmModel& pfm, std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                           std::span<const TokenId> trigger, std::size_t threads) {
  const auto clean = predict_classes(pfm, test, prompt, {}, threads);
  const auto triggered = predict_classes(pfm, test, prompt, trigger, threads);
  return asr_from_predictions(clean, triggered, labels_of(test));
}

double angular_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::kShapeMismatch, "semantic_similarity: embedding sizes differ");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0 || nv == 0) throw Error(ErrorCode::kZeroNorm, "semantic_similarity: zero-norm embedding");
  const double cosine = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
  return 1.0 - std::acos(cosine) / std::numbers::pi;
}

double semantic_similarity(const MlmModel& model, std::span<const TokenId> original,
                           std::span<const TokenId> perturbed) {
  if (original.empty() || perturbed.empty()) throw Error(ErrorCode::kEmptyInput, "semantic_similarity: empty text");
  const std::size_t cap = model.config().max_seq_len;
  auto clip = [cap](std::span<const TokenId> t) { return t.size() > cap ? t.last(cap) : t; };
  return angular_similarity(model.lm.sentence_embedding(clip(original)), model.lm.sentence_embedding(clip(perturbed)));
}

double semantic_similarity(const MlmModel& model, const std::string& original, const std::string& perturbed) {
  return semantic_similarity(model, model.vocab.encode(original), model.vocab.encode(perturbed));
}

SssStats summarize_sss(std::span<const double> values) {
  SssStats s;
  s.values.assign(values.begin(), values.end());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  double var = 0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / double(values.size()));
  return s;
}

SssStats sss_of_attack(const MlmModel& model, std::span<const EvalExample> examples, std::span<const TokenId> trigger,
                       std::size_t threads) {
  std::vector<double> values(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& s = examples[i].sentence;
    if (trigger.empty()) {
      values[i] = 1.0;
      return;
    }
    TokenIds perturbed(s.begin(), s.end());
    perturbed.insert(perturbed.end(), trigger.begin(), trigger.end());
    values[i] = semantic_similarity(model, s, perturbed);
  });
  return summarize_sss(values);
}

nlohmann::json AttackReport::to_json() const {
  nlohmann::json j = {{"task", task},
                      {"prompt_kind", prompt_kind},
                      {"trigger", trigger},
                      {"trigger_ids", trigger_ids},
                      {"alpha", alpha},
                      {"acc", acc},
                      {"asr", asr},
                      {"sss_mean", sss_mean},
                      {"sss_std", sss_std},
                      {"n_eval", n_eval},
                      {"n_correct", n_correct},
                      {"seed", seed}};
  if (!records.empty()) {
    auto& rows = j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
      rows.push_back({{"text", r.text},
                      {"label", r.label},
                      {"clean_prediction", r.clean_prediction},
                      {"triggered_prediction", r.triggered_prediction},
                      {"sss", r.sss}});
    }
  }
  return j;
}

AttackReport evaluate_attack(const MlmModel& pfm, const MlmModel& embedder, const std::string& task_name,
                             std::span<const EvalExample> test, const ResolvedPrompt& prompt,
                             std::span<const TokenId> trigger, const AttackOptions& options) {
  AttackReport r;
  r.task = task_name;
  r.prompt_kind = prompt.spec.kind == TemplateKind::kNull ? "null" : "manual";
  r.trigger = pfm.vocab.to_strings(trigger);
  r.trigger_ids.assign(trigger.begin(), trigger.end());
  r.n_eval = test.size();

  const auto labels = labels_of(test);
  const auto clean = predict_classes(pfm, test, prompt, {}, options.threads);
  const auto triggered = predict_classes(pfm, test, prompt, trigger, options.threads);
  r.acc = accuracy_from_predictions(clean, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) r.n_correct += clean[i] == labels[i];
  r.asr = asr_from_predictions(clean, triggered, labels);
  const SssStats sss = sss_of_attack(embedder, test, trigger, options.threads);
  r.sss_mean = sss.mean;
  r.sss_std = sss.stddev;
  if (options.keep_records) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      r.records.push_back({pfm.vocab.decode(test[i].sentence), labels[i], clean[i], triggered[i], sss.values[i]});
    }
  }
  return r;
}

std::string attack_plot_csv(std::span<const AttackReport> reports) {
  std::ostringstream os;
  os.precision(17);
  os << "task,prompt,length,alpha,seed,acc,asr,sss_mean,sss_std,trigger\n";
  for (const auto& r : reports) {
    std::string words;
    for (const auto& w : r.trigger) words += (words.empty() ? "" : " ") + w;
    os << r.task << ',' << r.prompt_kind << ',' << r.trigger_ids.size() << ',' << r.alpha << ',' << r.seed << ','
       << r.acc << ',' << r.asr << ',' << r.sss_mean << ',' << r.sss_std << ',' << csv_quote(words) << '\n';
  }
  return os.str();
}

}  // namespace uat
