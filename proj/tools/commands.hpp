#pragma once

// Subcommands of the `uat` tool. Each takes an effective JSON config (see
// default_config) and an output path, writes its artifact atomically and
// returns a short JSON summary.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/error.hpp"

namespace uat::cli {

std::vector<std::string> command_names();
nlohmann::json default_config(std::string_view command);

struct Invocation {
  std::string command;
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::vector<std::string> overrides;
};

// Defaults <- config file <- --set overrides <- --seed.
nlohmann::json effective_config(const Invocation& inv);

nlohmann::json cmd_train_mlm(const nlohmann::json& config, const std::filesystem::path& out);
nlohmann::json cmd_finetune(const nlohmann::json& config, const std::filesystem::path& out);
nlohmann::json cmd_search(const nlohmann::json& config, const std::filesystem::path& out);
nlohmann::json cmd_attack(const nlohmann::json& config, const std::filesystem::path& out);
nlohmann::json cmd_defend(const nlohmann::json& config, const std::filesystem::path& out);
// Writes the CSV to `out` and the full JSON report next to it (.json).
nlohmann::json cmd_sweep(const nlohmann::json& config, const std::filesystem::path& out);

nlohmann::json execute(const Invocation& inv);

// 2 for bad configs, 3 for missing files, 1 otherwise.
int exit_code_for(ErrorCode code);

// Full command-line entry point; prints the summary JSON to `out` and error
// JSON to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Report JSON with the "timing" member removed, for determinism checks.
nlohmann::json strip_timing(nlohmann::json report);

}  // namespace uat::cli
