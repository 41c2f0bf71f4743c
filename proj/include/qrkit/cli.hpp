#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/attention.hpp"
#include "qrkit/prompt.hpp"
#include "qrkit/tokenizer.hpp"

namespace qrkit {

/// Settings shared by every command. Resolved from defaults, then a config
/// file, then QRKIT_* environment variables, then flags.
struct RunConfig {
  std::optional<std::string> model;
  std::optional<std::string> synthetic_plan;
  std::optional<std::string> tokenizer;  // byte-level when unset
  std::string template_id = std::string(kDefaultTemplate);
  std::size_t top_k_heads = 16;
  bool calibration = true;
  std::string null_query = "N/A";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out = "out";

  /// Exactly one of model / synthetic_plan; only checked by commands that
  /// need a provider.
  void require_source() const;
  /// Everything except `out`; this is what the manifest hash covers.
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

using KeyValues = std::map<std::string, std::string>;

/// Recognised configuration keys, in documentation order.
const std::vector<std::string>& config_keys();

/// `key = value` lines; '#' starts a comment. Unknown keys are errors.
KeyValues parse_config_text(std::string_view text, std::string_view origin = "config");
KeyValues load_config_file(const std::filesystem::path& path);
/// QRKIT_<KEY> for every known key, key upper-cased.
KeyValues env_overrides(const std::function<std::optional<std::string>(const std::string&)>& getenv);
KeyValues process_env_overrides();

/// Applies the layers in order, later layers winning.
RunConfig resolve_config(const std::vector<KeyValues>& layers);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

std::unique_ptr<AttentionProvider> make_provider(const RunConfig& config, const TokenizerSpec& spec);
TokenizerSpec make_tokenizer(const RunConfig& config);

/// Runs one invocation, `args` excluding the program name. Returns the exit
/// status; diagnostics go to `err`, summaries to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Re-executes the command recorded in a manifest, writing into `out_dir`.
void replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                     std::ostream& out);

}  // namespace qrkit
