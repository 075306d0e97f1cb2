#include "config.hpp"

#include <fstream>
#include <sstream>

#include "uat/error.hpp"

namespace uat::cli {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_label(const nlohmann::json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const nlohmann::json& want, const nlohmann::json& got) {
  if (want.is_null()) return true;
  if (want.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<long long>() >= 0);
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  return want.type() == got.type();
}

std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  return parts;
}

}  // namespace

nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) {
    throw Error(ErrorCode::kConfig, "config" + (path.empty() ? "" : " key '" + path + "'") + ": expected an object");
  }
  nlohmann::json out = defaults;
  for (const auto& [key, value] : user.items()) {
    const std::string where = join(path, key);
    if (!defaults.contains(key)) throw Error(ErrorCode::kConfig, "unknown config key '" + where + "'");
    const auto& want = defaults.at(key);
    if (want.is_object()) {
      out[key] = merge_config(want, value, where);
    } else if (!compatible(want, value)) {
      throw Error(ErrorCode::kConfig, "config key '" + where + "': expected " + type_label(want) + ", got " +
                                          type_label(value));
    } else {
      out[key] = value;
    }
  }
  return out;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kMissingFile, "config file not found: " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

void apply_override(nlohmann::json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::kConfig, "override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &config;
  const auto parts = split_path(key);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    nlohmann::json& next = (*node)[parts[i]];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw Error(ErrorCode::kConfig, "override '" + key + "': '" + parts[i] + "' is not an object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

const nlohmann::json& at_path(const nlohmann::json& config, const std::string& dotted) {
  const nlohmann::json* node = &config;
  for (const auto& part : split_path(dotted)) {
    if (!node->is_object() || !node->contains(part)) throw Error(ErrorCode::kConfig, "missing config key '" + dotted + "'");
    node = &node->at(part);
  }
  return *node;
}

void require_string(const nlohmann::json& config, const std::string& key) {
  const auto& v = at_path(config, key);
  if (!v.is_string() || v.get<std::string>().empty()) {
    throw Error(ErrorCode::kConfig, "missing required config key '" + key + "'");
  }
}

}  // namespace uat::cli
