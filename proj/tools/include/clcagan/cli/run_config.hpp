#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clcagan/train.hpp"

namespace clcagan::cli {

using nlohmann::json;

/// Everything a `train` run needs. Mirrors TrainConfig plus data and output.
struct RunConfig {
  TrainConfig train;
  std::vector<std::string> scenes;  // "dir" or "cube.hsib[,truth.msk]", in task order
  std::vector<std::string> names;   // optional task names, default from paths
  std::string out;
  int threads = 1;
};

json default_config_json();
json config_to_json(const RunConfig& config);
/// Throws ConfigError on unknown keys or wrongly typed values.
RunConfig config_from_json(const json& doc);

/// Applies "key=value" (dotted keys reach nested objects; the value is read
/// as JSON, falling back to a plain string) to `overrides`.
void apply_assignment(json& overrides, const std::string& assignment);

struct ResolvedConfig {
  RunConfig config;
  json defaults;
  json file;
  json flags;
  json resolved;
};

/// defaults < file < flags. Unknown keys in either layer are rejected.
ResolvedConfig resolve_config(const std::optional<std::filesystem::path>& file, const json& flag_overrides);

json read_json_file(const std::filesystem::path& path);  // ConfigError on parse failure
void write_json_file(const json& doc, const std::filesystem::path& path);

}  // namespace clcagan::cli
