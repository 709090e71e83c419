#include "clcagan/cli/run_config.hpp"

#include <fstream>

#include "clcagan/error.hpp"

namespace clcagan::cli {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

std::string coupling_name(CouplingMode m) { return m == CouplingMode::Softmax ? "softmax" : "raw"; }

void check_keys(const json& doc, const json& schema, const std::string& prefix) {
  if (!doc.is_object()) config_error("'" + (prefix.empty() ? std::string("config") : prefix) + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) config_error("unknown config key '" + path + "'");
    if (schema[key].is_object()) check_keys(value, schema[key], path);
  }
}

void merge(json& into, const json& layer) {
  for (const auto& [key, value] : layer.items()) {
    if (value.is_object() && into.contains(key) && into[key].is_object()) {
      merge(into[key], value);
    } else {
      into[key] = value;
    }
  }
}

template <typename T>
T get(const json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string("config key '") + key + "' has the wrong type or is missing");
  }
}

std::pair<double, double> get_range(const json& doc, const char* key) {
  const auto v = get<std::vector<double>>(doc, key);
  if (v.size() != 2) config_error(std::string("'") + key + "' must be a [low, high] pair");
  return {v[0], v[1]};
}

}  // namespace

json config_to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& a = t.arch;
  json arch = {{"g_hidden", a.g_hidden},         {"g_groups", a.g_groups},       {"g_per_group", a.g_per_group},
               {"g_capsule_dim", a.g_capsule_dim}, {"latent_dim", a.latent_dim},   {"dec_hidden", a.dec_hidden},
               {"d_groups", a.d_groups},         {"d_per_group", a.d_per_group}, {"d_out", a.d_out},
               {"conv_channels", a.conv_channels}, {"routing_iters", a.routing_iters},
               {"coupling", coupling_name(a.coupling)}, {"leaky_slope", a.leaky_slope}};
  json augment = {{"brightness", t.augment.brightness},
                  {"contrast", {t.augment.contrast_lo, t.augment.contrast_hi}},
                  {"saturation", {t.augment.saturation_lo, t.augment.saturation_hi}}};
  return {{"mode", to_string(t.mode)},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr_g", t.lr_g},
          {"lr_d", t.lr_d},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"csd_weight", t.csd_weight},
          {"replay_mix_ratio", t.replay_mix_ratio},
          {"replay_as_real", t.replay_as_real},
          {"csd_batch", t.csd_batch},
          {"seed", t.seed},
          {"augment", augment},
          {"use_cbm", t.use_cbm},
          {"cbm_beta", t.cbm_beta},
          {"window", t.window},
          {"pca_dim", t.pca_dim},
          {"replay_capacity", t.replay_capacity},
          {"replay_policy", t.replay_policy == ReplayPolicy::Append ? "append" : "reselect"},
          {"clusters", t.clusters},
          {"kmeans_iters", t.kmeans_iters},
          {"roc_thresholds", t.roc_thresholds},
          {"arch", arch},
          {"scenes", c.scenes},
          {"names", c.names},
          {"out", c.out},
          {"threads", c.threads}};
}

json default_config_json() { return config_to_json(RunConfig{}); }

RunConfig config_from_json(const json& doc) {
  check_keys(doc, default_config_json(), "");
  json full = default_config_json();
  merge(full, doc);
  RunConfig c;
  auto& t = c.train;
  t.mode = parse_train_mode(get<std::string>(full, "mode"));
  t.epochs = get<int>(full, "epochs");
  t.batch_size = get<std::size_t>(full, "batch_size");
  t.lr_g = get<double>(full, "lr_g");
  t.lr_d = get<double>(full, "lr_d");
  t.beta1 = get<double>(full, "beta1");
  t.beta2 = get<double>(full, "beta2");
  t.adam_eps = get<double>(full, "adam_eps");
  t.csd_weight = get<double>(full, "csd_weight");
  t.replay_mix_ratio = get<double>(full, "replay_mix_ratio");
  t.replay_as_real = get<bool>(full, "replay_as_real");
  t.csd_batch = get<std::size_t>(full, "csd_batch");
  t.seed = get<std::uint64_t>(full, "seed");
  const auto& aug = full["augment"];
  t.augment.brightness = get<double>(aug, "brightness");
  std::tie(t.augment.contrast_lo, t.augment.contrast_hi) = get_range(aug, "contrast");
  std::tie(t.augment.saturation_lo, t.augment.saturation_hi) = get_range(aug, "saturation");
  t.use_cbm = get<bool>(full, "use_cbm");
  t.cbm_beta = get<double>(full, "cbm_beta");
  t.window = get<std::size_t>(full, "window");
  t.pca_dim = get<std::size_t>(full, "pca_dim");
  t.replay_capacity = get<std::size_t>(full, "replay_capacity");
  const auto policy = get<std::string>(full, "replay_policy");
  if (policy != "append" && policy != "reselect") config_error("replay_policy must be 'append' or 'reselect'");
  t.replay_policy = policy == "append" ? ReplayPolicy::Append : ReplayPolicy::Reselect;
  t.clusters = get<std::size_t>(full, "clusters");
  t.kmeans_iters = get<int>(full, "kmeans_iters");
  t.roc_thresholds = get<std::size_t>(full, "roc_thresholds");
  const auto& arch = full["arch"];
  auto& a = t.arch;
  a.g_hidden = get<std::size_t>(arch, "g_hidden");
  a.g_groups = get<std::size_t>(arch, "g_groups");
  a.g_per_group = get<std::size_t>(arch, "g_per_group");
  a.g_capsule_dim = get<std::size_t>(arch, "g_capsule_dim");
  a.latent_dim = get<std::size_t>(arch, "latent_dim");
  a.dec_hidden = get<std::size_t>(arch, "dec_hidden");
  a.d_groups = get<std::size_t>(arch, "d_groups");
  a.d_per_group = get<std::size_t>(arch, "d_per_group");
  a.d_out = get<std::size_t>(arch, "d_out");
  a.conv_channels = get<std::size_t>(arch, "conv_channels");
  a.routing_iters = get<int>(arch, "routing_iters");
  const auto coupling = get<std::string>(arch, "coupling");
  if (coupling != "softmax" && coupling != "raw") config_error("arch.coupling must be 'softmax' or 'raw'");
  a.coupling = coupling == "softmax" ? CouplingMode::Softmax : CouplingMode::RawLogits;
  a.leaky_slope = get<double>(arch, "leaky_slope");
  c.scenes = get<std::vector<std::string>>(full, "scenes");
  c.names = get<std::vector<std::string>>(full, "names");
  c.out = get<std::string>(full, "out");
  c.threads = get<int>(full, "threads");
  if (c.threads < 1) config_error("threads must be >= 1");
  if (!c.names.empty() && c.names.size() != c.scenes.size()) config_error("names must match scenes one to one");
  t.validate();
  return c;
}

void apply_assignment(json& overrides, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("expected key=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &overrides;
  std::size_t start = 0;
  for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
    node = &(*node)[key.substr(start, dot - start)];
    if (!node->is_object()) *node = json::object();
    start = dot + 1;
  }
  (*node)[key.substr(start)] = value;
}

ResolvedConfig resolve_config(const std::optional<std::filesystem::path>& file, const json& flag_overrides) {
  ResolvedConfig r;
  r.defaults = default_config_json();
  r.file = file ? read_json_file(*file) : json::object();
  r.flags = flag_overrides.is_null() ? json::object() : flag_overrides;
  check_keys(r.file, r.defaults, "");
  check_keys(r.flags, r.defaults, "");
  json merged = r.defaults;
  merge(merged, r.file);
  merge(merged, r.flags);
  r.config = config_from_json(merged);
  r.resolved = config_to_json(r.config);
  return r;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) config_error("malformed JSON in " + path.string());
  return doc;
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace clcagan::cli
