#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "uat/checkpoint.hpp"
#include "uat/corpus.hpp"
#include "uat/defense.hpp"
#include "uat/eval.hpp"
#include "uat/mlm.hpp"
#include "uat/parallel.hpp"
#include "uat/prompt.hpp"
#include "uat/rng.hpp"
#include "uat/search.hpp"
#include "uat/vocab.hpp"

namespace uat::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config sections ------------------------------------------------------

json corpus_defaults() { return {{"source", "synthetic"}, {"path", ""}, {"lines", 2000u}}; }

json task_defaults() {
  return {{"source", "synthetic"}, {"name", "sentiment"}, {"path", ""}, {"n_train", 200u}, {"n_test", 100u},
          {"max_examples", 0u}};
}

json prompt_defaults() {
  return {{"kind", "manual"}, {"template", ""}, {"verbalizer", json::array()}};
}

json search_defaults() {
  const SearchConfig d;
  return {{"trigger_length", d.trigger_length}, {"steps", d.steps},
          {"batch_size", d.batch_size},         {"alpha", d.alpha},
          {"candidate_size", d.candidate_size}, {"beam_size", d.beam_size},
          {"sem_context", "left-only"},         {"frozen_batch", d.frozen_batch}};
}

json dataset_defaults() {
  return {{"n_examples", kDefaultMaskedExamples}, {"content_words_only", false}};
}

json trigger_defaults() { return {{"report", ""}, {"text", ""}, {"random_length", 0u}}; }

json base_defaults() { return {{"schema_version", kSchemaVersion}, {"seed", 0u}, {"threads", 1u}}; }

json with_base(json body) {
  json out = base_defaults();
  out.update(body);
  return out;
}

json target_defaults() { return {{"pfm", ""}, {"task", task_defaults()}, {"prompt", prompt_defaults()}}; }

// ---- helpers --------------------------------------------------------------

std::uint64_t seed_of(const json& c) { return c.at("seed").get<std::uint64_t>(); }
std::size_t threads_of(const json& c) { return std::max<std::size_t>(1, c.at("threads").get<std::size_t>()); }

void require_file(const json& c, const std::string& key) {
  require_string(c, key);
  const fs::path p = at_path(c, key).get<std::string>();
  if (!fs::exists(p)) throw Error(ErrorCode::kMissingFile, "file for '" + key + "' not found: " + p.string());
}

MlmModel load_model(const json& c, const std::string& key) {
  require_file(c, key);
  return load_checkpoint(at_path(c, key).get<std::string>());
}

std::vector<std::string> load_corpus(const json& corpus, std::uint64_t seed) {
  const auto source = corpus.at("source").get<std::string>();
  if (source == "synthetic") return synthetic_corpus(corpus.at("lines").get<std::size_t>(), derive_seed(seed, "corpus"));
  if (source == "file") {
    require_file(corpus, "path");
    return read_lines(corpus.at("path").get<std::string>());
  }
  throw Error(ErrorCode::kConfig, "corpus.source: expected 'synthetic' or 'file', got '" + source + "'");
}

TaskDataset load_task(const json& task, std::uint64_t seed) {
  const auto source = task.at("source").get<std::string>();
  TaskDataset t;
  if (source == "synthetic") {
    t = synthetic_task(task.at("name").get<std::string>(), task.at("n_train").get<std::size_t>(),
                       task.at("n_test").get<std::size_t>(), derive_seed(seed, "task"));
  } else if (source == "jsonl") {
    require_file(task, "path");
    t = load_task_jsonl(task.at("path").get<std::string>(), task.at("name").get<std::string>());
  } else {
    throw Error(ErrorCode::kConfig, "task.source: expected 'synthetic' or 'jsonl', got '" + source + "'");
  }
  t.validate();
  return t;
}

TemplateKind parse_kind(const std::string& kind) {
  if (kind == "null") return TemplateKind::kNull;
  if (kind == "manual") return TemplateKind::kManual;
  throw Error(ErrorCode::kConfig, "prompt.kind: expected 'null' or 'manual', got '" + kind + "'");
}

// Explicit template > prompt recorded in the model > synthetic default.
PromptSpec prompt_for(const json& prompt, const TaskDataset& task, const MlmModel* pfm) {
  if (!prompt.at("template").get<std::string>().empty()) {
    return PromptSpec::from_json({{"kind", prompt.at("kind")},
                                  {"template", prompt.at("template")},
                                  {"verbalizer", prompt.at("verbalizer")}});
  }
  if (pfm != nullptr && pfm->metadata.contains("prompt")) return PromptSpec::from_json(pfm->metadata.at("prompt"));
  return default_prompt(task.name, parse_kind(prompt.at("kind").get<std::string>()));
}

std::vector<EvalExample> test_examples(const TaskDataset& task, const json& task_cfg, const Vocabulary& vocab,
                                       const ResolvedPrompt& prompt) {
  auto test = task.split(Split::kTest);
  const auto cap = task_cfg.at("max_examples").get<std::size_t>();
  if (cap > 0 && test.size() > cap) test.resize(cap);
  if (test.empty()) throw Error(ErrorCode::kConfig, "task '" + task.name + "' has no test examples");
  return encode_examples(vocab, test, prompt);
}

SearchConfig search_config(const json& s, std::uint64_t seed, std::size_t threads) {
  SearchConfig c;
  c.trigger_length = s.at("trigger_length").get<std::size_t>();
  c.steps = s.at("steps").get<std::size_t>();
  c.batch_size = s.at("batch_size").get<std::size_t>();
  c.alpha = s.at("alpha").get<double>();
  c.candidate_size = s.at("candidate_size").get<std::size_t>();
  c.beam_size = s.at("beam_size").get<std::size_t>();
  try {
    c.sem_context = parse_context_mode(s.at("sem_context").get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("search.sem_context: ") + e.what());
  }
  c.frozen_batch = s.at("frozen_batch").get<bool>();
  c.seed = derive_seed(seed, "search");
  c.threads = threads;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return c;
}

std::vector<MaskedExample> search_dataset(const json& c, const Vocabulary& vocab, std::uint64_t seed) {
  const auto corpus = load_corpus(c.at("corpus"), seed);
  MaskedDatasetOptions o;
  o.n_examples = c.at("dataset").at("n_examples").get<std::size_t>();
  o.content_words_only = c.at("dataset").at("content_words_only").get<bool>();
  o.seed = derive_seed(seed, "dataset");
  return make_masked_dataset(corpus, vocab, o).examples;
}

TokenIds trigger_from(const json& t, const Vocabulary& vocab, std::uint64_t seed) {
  const auto report = t.at("report").get<std::string>();
  const auto text = t.at("text").get<std::string>();
  const auto random_length = t.at("random_length").get<std::size_t>();
  const int chosen = int(!report.empty()) + int(!text.empty()) + int(random_length > 0);
  if (chosen > 1) throw Error(ErrorCode::kConfig, "trigger: set only one of report, text, random_length");
  if (!report.empty()) {
    require_file(t, "report");
    const auto bytes = read_file_bytes(report);
    try {
      const json r = json::parse(bytes.begin(), bytes.end());
      const auto& best = r.at("result").at("beam").at(0);
      TokenIds ids;
      for (const auto& w : best.at("tokens")) {
        const auto word = w.get<std::string>();
        if (!vocab.contains(word)) throw Error(ErrorCode::kConfig, "trigger word '" + word + "' is not in the model vocabulary");
        ids.push_back(vocab.id(word));
      }
      return ids;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfig, "trigger.report: not a search report: " + std::string(e.what()));
    }
  }
  if (!text.empty()) return vocab.encode(text);
  if (random_length > 0) return random_trigger(vocab, random_length, derive_seed(seed, "trigger.random")).token_ids;
  return {};
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class Timer {
 public:
  Timer() : started_at_(utc_now()), start_(std::chrono::steady_clock::now()) {}
  json to_json() const {
    return {{"started_at", started_at_},
            {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
  }

 private:
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
};

json report(const std::string& command, const json& config, json result, const Timer& timer) {
  return {{"command", command},
          {"config", config},
          {"seed", config.at("seed")},
          {"result", std::move(result)},
          {"timing", timer.to_json()}};
}

void write_json(const fs::path& out, const json& j) { write_file_atomic(out, j.dump(2) + "\n"); }

AdamWOptions optimizer_from(const json& t) {
  AdamWOptions o;
  o.learning_rate = t.at("learning_rate").get<double>();
  o.weight_decay = t.at("weight_decay").get<double>();
  o.clip_norm = t.at("clip_norm").get<double>();
  return o;
}

}  // namespace

std::vector<std::string> command_names() { return {"train-mlm", "finetune", "search", "attack", "defend", "sweep"}; }

json default_config(std::string_view command) {
  if (command == "train-mlm") {
    const MlmConfig m;
    const PretrainOptions p;
    return with_base({{"corpus", corpus_defaults()},
                      {"vocab", {{"max_size", 4096u}, {"min_freq", 1u}}},
                      {"model",
                       {{"d_model", m.d_model},
                        {"n_layers", m.n_layers},
                        {"n_heads", m.n_heads},
                        {"d_ff", m.d_ff},
                        {"max_seq_len", m.max_seq_len}}},
                      {"training",
                       {{"epochs", p.epochs},
                        {"batch_size", p.batch_size},
                        {"max_steps", p.max_steps},
                        {"mask_probability", p.mask_probability},
                        {"learning_rate", 3e-3},
                        {"weight_decay", p.optimizer.weight_decay},
                        {"clip_norm", p.optimizer.clip_norm}}}});
  }
  if (command == "finetune") {
    const FinetuneOptions f;
    return with_base({{"plm", ""},
                      {"task", task_defaults()},
                      {"prompt", prompt_defaults()},
                      {"training",
                       {{"shots", f.shots},
                        {"epochs", f.epochs},
                        {"batch_size", f.batch_size},
                        {"learning_rate", f.optimizer.learning_rate},
                        {"weight_decay", f.optimizer.weight_decay},
                        {"clip_norm", f.optimizer.clip_norm}}}});
  }
  if (command == "search") {
    return with_base({{"plm", ""}, {"corpus", corpus_defaults()}, {"dataset", dataset_defaults()}, {"search", search_defaults()}});
  }
  if (command == "attack") {
    return with_base({{"pfm", ""},
                      {"embedder", ""},
                      {"task", task_defaults()},
                      {"prompt", prompt_defaults()},
                      {"trigger", trigger_defaults()},
                      {"alpha", 0.0},
                      {"records", false}});
  }
  if (command == "defend") {
    return with_base({{"pfm", ""},
                      {"scorer", ""},
                      {"task", task_defaults()},
                      {"prompt", prompt_defaults()},
                      {"trigger", trigger_defaults()},
                      {"alpha", 0.0},
                      {"defense",
                       {{"calibrate", true},
                        {"threshold", 0.0},
                        {"budget", kCleanRemovalBudget},
                        {"calibration_examples", 64u}}}});
  }
  if (command == "sweep") {
    json alphas = json::array(), lengths = json::array();
    for (double a : kAlphaGrid) alphas.push_back(a);
    for (std::size_t l : kTriggerLengths) lengths.push_back(l);
    return with_base({{"plm", ""},
                      {"corpus", corpus_defaults()},
                      {"dataset", dataset_defaults()},
                      {"search", search_defaults()},
                      {"alphas", alphas},
                      {"lengths", lengths},
                      {"targets", json::array()}});
  }
  throw Error(ErrorCode::kConfig, "unknown command '" + std::string(command) + "'");
}

json effective_config(const Invocation& inv) {
  const json defaults = default_config(inv.command);
  json user = inv.config_path ? load_config_file(*inv.config_path) : json::object();
  for (const auto& o : inv.overrides) apply_override(user, o);
  if (inv.seed) user["seed"] = *inv.seed;
  json c = merge_config(defaults, user);
  if (c.at("schema_version").get<int>() != kSchemaVersion) {
    throw Error(ErrorCode::kConfig, "schema_version: expected " + std::to_string(kSchemaVersion));
  }
  return c;
}

// ---- train-mlm ------------------------------------------------------------

json cmd_train_mlm(const json& c, const fs::path& out) {
  const std::uint64_t seed = seed_of(c);
  const auto corpus = load_corpus(c.at("corpus"), seed);
  const auto& v = c.at("vocab");
  const Vocabulary vocab = build_vocab(corpus, v.at("max_size").get<std::size_t>(), v.at("min_freq").get<std::size_t>());

  MlmConfig m;
  const auto& mc = c.at("model");
  m.d_model = mc.at("d_model").get<std::size_t>();
  m.n_layers = mc.at("n_layers").get<std::size_t>();
  m.n_heads = mc.at("n_heads").get<std::size_t>();
  m.d_ff = mc.at("d_ff").get<std::size_t>();
  m.max_seq_len = mc.at("max_seq_len").get<std::size_t>();
  m.seed = derive_seed(seed, "mlm.init");

  const auto& t = c.at("training");
  PretrainOptions p;
  p.epochs = t.at("epochs").get<std::size_t>();
  p.batch_size = t.at("batch_size").get<std::size_t>();
  p.max_steps = t.at("max_steps").get<std::size_t>();
  p.mask_probability = t.at("mask_probability").get<double>();
  p.optimizer = optimizer_from(t);
  p.seed = derive_seed(seed, "mlm.train");

  PretrainResult r = pretrain(vocab, corpus, m, p);
  r.model.metadata["run_config"] = c;
  save_checkpoint(r.model, out);
  return {{"checkpoint", out.string()},
          {"vocab_size", vocab.size()},
          {"steps", r.steps},
          {"final_loss", r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back()}};
}

// ---- finetune -------------------------------------------------------------

json cmd_finetune(const json& c, const fs::path& out) {
  const std::uint64_t seed = seed_of(c);
  const MlmModel plm = load_model(c, "plm");
  const TaskDataset task = load_task(c.at("task"), seed);
  const PromptSpec prompt = prompt_for(c.at("prompt"), task, nullptr);

  const auto& t = c.at("training");
  FinetuneOptions f;
  f.shots = t.at("shots").get<std::size_t>();
  f.epochs = t.at("epochs").get<std::size_t>();
  f.batch_size = t.at("batch_size").get<std::size_t>();
  f.optimizer = optimizer_from(t);
  f.seed = derive_seed(seed, "finetune");

  FinetuneResult r = finetune(plm, task, prompt, f);
  r.model.metadata["run_config"] = c;
  const ResolvedPrompt resolved = resolve_prompt(prompt, r.model.vocab);
  const auto test = test_examples(task, c.at("task"), r.model.vocab, resolved);
  const double acc = accuracy(r.model, test, resolved, threads_of(c));
  r.model.metadata["test_accuracy"] = acc;
  save_checkpoint(r.model, out);
  return {{"checkpoint", out.string()}, {"task", task.name}, {"shots_used", r.shots_used}, {"test_accuracy", acc}};
}

// ---- search ---------------------------------------------------------------

json cmd_search(const json& c, const fs::path& out) {
  const Timer timer;
  const std::uint64_t seed = seed_of(c);
  const MlmModel plm = load_model(c, "plm");
  const SearchConfig sc = search_config(c.at("search"), seed, threads_of(c));
  const auto dataset = search_dataset(c, plm.vocab, seed);
  const SearchResult r = beam_search(plm, dataset, sc);
  const json rep = report("search", c, search_result_to_json(r, plm.vocab), timer);
  write_json(out, rep);
  return {{"report", out.string()}, {"trigger", rep["result"]["beam"][0]["text"]}, {"loss", r.beam.front().loss}};
}

// ---- attack ---------------------------------------------------------------

json cmd_attack(const json& c, const fs::path& out) {
  const Timer timer;
  const std::uint64_t seed = seed_of(c);
  const MlmModel pfm = load_model(c, "pfm");
  const bool own_embedder = !c.at("embedder").get<std::string>().empty();
  const MlmModel embedder = own_embedder ? load_model(c, "embedder") : pfm;
  const TaskDataset task = load_task(c.at("task"), seed);
  const ResolvedPrompt prompt = resolve_prompt(prompt_for(c.at("prompt"), task, &pfm), pfm.vocab);
  const auto test = test_examples(task, c.at("task"), pfm.vocab, prompt);
  const TokenIds trigger = trigger_from(c.at("trigger"), pfm.vocab, seed);

  AttackOptions o;
  o.threads = threads_of(c);
  o.keep_records = c.at("records").get<bool>();
  AttackReport r = evaluate_attack(pfm, embedder, task.name, test, prompt, trigger, o);
  r.alpha = c.at("alpha").get<double>();
  r.seed = seed;
  write_json(out, report("attack", c, r.to_json(), timer));
  return {{"report", out.string()}, {"acc", r.acc}, {"asr", r.asr}, {"sss_mean", r.sss_mean}};
}

// ---- defend ---------------------------------------------------------------

json cmd_defend(const json& c, const fs::path& out) {
  const Timer timer;
  const std::uint64_t seed = seed_of(c);
  const MlmModel pfm = load_model(c, "pfm");
  const bool own_scorer = !c.at("scorer").get<std::string>().empty();
  const MlmModel scorer_model = own_scorer ? load_model(c, "scorer") : pfm;
  const TaskDataset task = load_task(c.at("task"), seed);
  const ResolvedPrompt prompt = resolve_prompt(prompt_for(c.at("prompt"), task, &pfm), pfm.vocab);
  const auto test = test_examples(task, c.at("task"), pfm.vocab, prompt);
  const TokenIds trigger = trigger_from(c.at("trigger"), pfm.vocab, seed);
  const auto& d = c.at("defense");

  const MlmPerplexityScorer scorer(scorer_model.lm);
  FilterConfig fc;
  fc.scorer = &scorer;
  fc.threads = threads_of(c);
  if (d.at("calibrate").get<bool>()) {
    auto train = task.split(Split::kTrain);
    const auto n = d.at("calibration_examples").get<std::size_t>();
    if (train.size() > n) train.resize(n);
    const auto clean = encode_examples(pfm.vocab, train, prompt);
    fc.threshold = calibrate_threshold(scorer, clean, d.at("budget").get<double>(), fc.threads);
  } else {
    fc.threshold = d.at("threshold").get<double>();
  }
  DefenseReport r = evaluate_defense(pfm, test, prompt, trigger, fc);
  r.task = task.name;
  r.alpha = c.at("alpha").get<double>();
  r.seed = seed;
  write_json(out, report("defend", c, r.to_json(), timer));
  return {{"report", out.string()},
          {"threshold", r.threshold},
          {"asr_before", r.asr_before},
          {"asr_after", r.asr_after},
          {"acc_before", r.acc_before},
          {"acc_after", r.acc_after}};
}

// ---- sweep ----------------------------------------------------------------

json cmd_sweep(const json& c, const fs::path& out) {
  const Timer timer;
  const std::uint64_t seed = seed_of(c);
  const MlmModel plm = load_model(c, "plm");
  const auto dataset = search_dataset(c, plm.vocab, seed);

  struct Target {
    MlmModel pfm;
    TaskDataset task;
    ResolvedPrompt prompt;
    std::vector<EvalExample> test;
  };
  std::vector<Target> targets;
  const auto& tl = c.at("targets");
  if (tl.empty()) throw Error(ErrorCode::kConfig, "sweep: 'targets' must list at least one {pfm, task}");
  for (std::size_t i = 0; i < tl.size(); ++i) {
    const json t = merge_config(target_defaults(), tl[i], "targets[" + std::to_string(i) + "]");
    MlmModel pfm = load_model(t, "pfm");
    TaskDataset task = load_task(t.at("task"), seed);
    ResolvedPrompt prompt = resolve_prompt(prompt_for(t.at("prompt"), task, &pfm), pfm.vocab);
    auto test = test_examples(task, t.at("task"), pfm.vocab, prompt);
    targets.push_back({std::move(pfm), std::move(task), std::move(prompt), std::move(test)});
  }

  std::vector<std::pair<double, std::size_t>> grid;
  for (const auto& a : c.at("alphas"))
    for (const auto& l : c.at("lengths")) grid.emplace_back(a.get<double>(), l.get<std::size_t>());

  std::vector<json> points(grid.size());
  std::vector<std::vector<AttackReport>> rows(grid.size());
  parallel_for(grid.size(), threads_of(c), [&](std::size_t g) {
    json s = c.at("search");
    s["alpha"] = grid[g].first;
    s["trigger_length"] = grid[g].second;
    const SearchResult r = beam_search(plm, dataset, search_config(s, seed, 1));
    const TokenIds& trigger = r.beam.front().token_ids;
    points[g] = {{"alpha", grid[g].first}, {"trigger_length", grid[g].second}, {"search", search_result_to_json(r, plm.vocab)}};
    for (const auto& t : targets) {
      AttackReport a = evaluate_attack(t.pfm, plm, t.task.name, t.test, t.prompt, trigger);
      a.alpha = grid[g].first;
      a.seed = seed;
      points[g]["attacks"].push_back(a.to_json());
      rows[g].push_back(std::move(a));
    }
  });

  std::vector<AttackReport> flat;
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t g = 0; g < grid.size(); ++g) flat.push_back(rows[g][t]);

  fs::path csv_path = out, json_path = fs::path(out).replace_extension(".json");
  if (out.extension() == ".json") csv_path = fs::path(out).replace_extension(".csv");
  write_file_atomic(csv_path, attack_plot_csv(flat));
  write_json(json_path, report("sweep", c, {{"points", points}}, timer));
  return {{"csv", csv_path.string()}, {"report", json_path.string()}, {"rows", flat.size()}};
}

// ---- dispatch -------------------------------------------------------------

json execute(const Invocation& inv) {
  const json c = effective_config(inv);
  if (inv.out.empty()) throw Error(ErrorCode::kConfig, "--out is required");
  if (inv.command == "train-mlm") return cmd_train_mlm(c, inv.out);
  if (inv.command == "finetune") return cmd_finetune(c, inv.out);
  if (inv.command == "search") return cmd_search(c, inv.out);
  if (inv.command == "attack") return cmd_attack(c, inv.out);
  if (inv.command == "defend") return cmd_defend(c, inv.out);
  if (inv.command == "sweep") return cmd_sweep(c, inv.out);
  throw Error(ErrorCode::kConfig, "unknown command '" + inv.command + "'");
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return 2;
    case ErrorCode::kMissingFile:
      return 3;
    default:
      return 1;
  }
}

namespace {

int fail(std::ostream& err, std::string_view code, const std::string& message, int exit_code) {
  err << json{{"error", {{"code", std::string(code)}, {"message", message}, {"exit_code", exit_code}}}}.dump() << "\n";
  return exit_code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Natural universal trigger search and evaluation for prompt-based masked LMs", "uat"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(UAT_VERSION));

  Invocation inv;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_path;
  const std::vector<std::pair<std::string, std::string>> help = {
      {"train-mlm", "pre-train a masked LM and write a checkpoint"},
      {"finetune", "prompt-based few-shot fine-tuning of a pre-trained checkpoint"},
      {"search", "search a universal trigger against a pre-trained checkpoint"},
      {"attack", "measure ACC, ASR and SSS of a trigger on a fine-tuned model"},
      {"defend", "apply the perplexity filter and report its effect on an attack"},
      {"sweep", "search and attack over the alpha x trigger-length grid"}};
  for (const auto& [name, description] : help) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON run config");
    sub->add_option("--seed", seed, "top-level seed (overrides the config)");
    sub->add_option("--out", out_path, "output path")->required();
    sub->add_option("--set", inv.overrides, "override a config value, e.g. search.alpha=0.1");
    sub->callback([&inv, name = name] { inv.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), 2);
  }

  const CLI::App* sub = app.get_subcommands().front();
  if (!config_path.empty()) inv.config_path = config_path;
  if (sub->count("--seed") > 0) inv.seed = seed;
  inv.out = out_path;

  try {
    out << execute(inv).dump() << "\n";
    return 0;
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    return fail(err, error_code_name(e.code()), e.what(), code);
  } catch (const std::exception& e) {
    return fail(err, "runtime", e.what(), 1);
  }
}

json strip_timing(json report) {
  report.erase("timing");
  return report;
}

}  // namespace uat::cli
