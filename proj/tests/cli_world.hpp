#pragma once

// Runs the `uat` entry point in-process against a scratch directory with
// small settings, so the whole pipeline fits in a few seconds.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "uat/checkpoint.hpp"

namespace uat::testing {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"uat"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

class CliWorkspace {
 public:
  explicit CliWorkspace(const std::string& name)
      : dir_(std::filesystem::temp_directory_path() / ("uat_cli_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~CliWorkspace() { std::filesystem::remove_all(dir_); }
  CliWorkspace(const CliWorkspace&) = delete;
  CliWorkspace& operator=(const CliWorkspace&) = delete;

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  std::string str(const std::string& name) const { return path(name).string(); }

  // train-mlm, finetune and search on tiny settings; returns false and fills
  // `error` on the first failing step.
  bool build_pipeline(std::string& error) {
    write_text(path("plm.json"), R"({
      "seed": 7,
      "corpus": {"lines": 300},
      "vocab": {"max_size": 300},
      "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_seq_len": 32},
      "training": {"epochs": 1, "max_steps": 30}
    })");
    write_text(path("pfm.json"), R"({
      "seed": 7,
      "plm": ")" + str("plm.ckpt") + R"(",
      "task": {"name": "sentiment", "n_train": 40, "n_test": 20},
      "training": {"shots": 8, "epochs": 2}
    })");
    write_text(path("search.json"), search_config_text());
    const std::vector<std::vector<std::string>> steps = {
        {"train-mlm", "--config", str("plm.json"), "--out", str("plm.ckpt")},
        {"finetune", "--config", str("pfm.json"), "--out", str("pfm.ckpt")},
        {"search", "--config", str("search.json"), "--out", str("search.json.out")}};
    for (const auto& s : steps) {
      const auto r = run_cli(s);
      if (r.code != 0) {
        error = s.front() + ": " + r.err;
        return false;
      }
    }
    return true;
  }

  std::string search_config_text() const {
    return R"({
      "seed": 7,
      "plm": ")" + str("plm.ckpt") + R"(",
      "corpus": {"lines": 300},
      "dataset": {"n_examples": 16},
      "search": {"trigger_length": 2, "steps": 1, "batch_size": 8, "candidate_size": 4, "beam_size": 2}
    })";
  }

 private:
  std::filesystem::path dir_;
};

}  // namespace uat::testing
