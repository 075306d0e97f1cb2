#pragma once

// JSON run configs: defaults per subcommand, strict merging of a user file
// onto them, and dotted-path overrides from the command line.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace uat::cli {

inline constexpr int kSchemaVersion = 1;

// Overlays `user` onto `defaults`. Keys absent from `defaults` and values of
// the wrong JSON type are rejected with their dotted key path.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user,
                            const std::string& path = {});

nlohmann::json load_config_file(const std::filesystem::path& path);

// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& config, std::string_view assignment);

// Throws kConfig naming `key` when config[key] (dotted) is an empty string.
void require_string(const nlohmann::json& config, const std::string& key);

const nlohmann::json& at_path(const nlohmann::json& config, const std::string& dotted);

}  // namespace uat::cli
