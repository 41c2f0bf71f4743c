#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>

#include <fmt/core.h>

#include "qrkit/cli.hpp"
#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/model.hpp"
#include "qrkit/synth.hpp"
#include "qrkit/weights_io.hpp"

namespace qrkit {

using nlohmann::json;

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {"model",       "synthetic_plan", "tokenizer", "template",
                                                "top_k_heads", "calibration",    "null_query", "seed",
                                                "jobs",        "out"};
  return keys;
}

namespace {

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ArgumentError(fmt::format("config {}: expected a non-negative integer, got '{}'", key, value));
  }
  return v;
}

bool parse_bool(const std::string& key, std::string value) {
  std::transform(value.begin(), value.end(), value.begin(), [](unsigned char c) { return std::tolower(c); });
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ArgumentError(fmt::format("config {}: expected a boolean, got '{}'", key, value));
}

std::optional<std::string> non_empty(const std::string& v) {
  return v.empty() ? std::nullopt : std::optional<std::string>(v);
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "model") {
    c.model = non_empty(value);
  } else if (key == "synthetic_plan") {
    c.synthetic_plan = non_empty(value);
  } else if (key == "tokenizer") {
    c.tokenizer = non_empty(value);
  } else if (key == "template") {
    c.template_id = value;
  } else if (key == "top_k_heads") {
    c.top_k_heads = parse_uint(key, value);
    if (c.top_k_heads == 0) throw ArgumentError("config top_k_heads: must be >= 1");
  } else if (key == "calibration") {
    c.calibration = parse_bool(key, value);
  } else if (key == "null_query") {
    c.null_query = value;
  } else if (key == "seed") {
    c.seed = parse_uint(key, value);
  } else if (key == "jobs") {
    c.jobs = std::max<std::size_t>(1, parse_uint(key, value));
  } else if (key == "out") {
    c.out = value;
  } else {
    throw ArgumentError("unknown config key '" + key + "'");
  }
}

void RunConfig::require_source() const {
  if (model.has_value() == synthetic_plan.has_value()) {
    throw ArgumentError("exactly one of model or synthetic_plan must be set");
  }
}

json RunConfig::to_json() const {
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  return {{"model", opt(model)},
          {"synthetic_plan", opt(synthetic_plan)},
          {"tokenizer", opt(tokenizer)},
          {"template", template_id},
          {"top_k_heads", top_k_heads},
          {"calibration", calibration},
          {"null_query", null_query},
          {"seed", seed},
          {"jobs", jobs}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  auto opt = [&](const char* key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
  };
  c.model = opt("model");
  c.synthetic_plan = opt("synthetic_plan");
  c.tokenizer = opt("tokenizer");
  c.template_id = j.value("template", c.template_id);
  c.top_k_heads = j.value("top_k_heads", c.top_k_heads);
  c.calibration = j.value("calibration", c.calibration);
  c.null_query = j.value("null_query", c.null_query);
  c.seed = j.value("seed", c.seed);
  c.jobs = j.value("jobs", c.jobs);
  return c;
}

KeyValues parse_config_text(std::string_view text, std::string_view origin) {
  KeyValues out;
  std::size_t line_no = 0;
  const auto& keys = config_keys();
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(fmt::format("{}:{}: expected key = value", origin, line_no));
    const std::string key = trim(line.substr(0, eq));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ParseError(fmt::format("{}:{}: unknown key '{}'", origin, line_no, key));
    }
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues load_config_file(const std::filesystem::path& path) {
  return parse_config_text(read_file(path), path.string());
}

KeyValues env_overrides(const std::function<std::optional<std::string>(const std::string&)>& getenv) {
  KeyValues out;
  for (const auto& key : config_keys()) {
    std::string name = "QRKIT_" + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (auto v = getenv(name)) out[key] = *v;
  }
  return out;
}

KeyValues process_env_overrides() {
  return env_overrides([](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  });
}

RunConfig resolve_config(const std::vector<KeyValues>& layers) {
  RunConfig c;
  for (const auto& layer : layers) {
    for (const auto& [k, v] : layer) apply_setting(c, k, v);
  }
  return c;
}

TokenizerSpec make_tokenizer(const RunConfig& config) {
  return config.tokenizer ? TokenizerSpec::load(*config.tokenizer) : TokenizerSpec::byte_level();
}

std::unique_ptr<AttentionProvider> make_provider(const RunConfig& config, const TokenizerSpec& spec) {
  config.require_source();
  if (config.model) return std::make_unique<RealTransformer>(load_weights(*config.model));
  return std::make_unique<SyntheticProvider>(SyntheticPlan::load(*config.synthetic_plan), spec);
}

}  // namespace qrkit
