#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bayescoh/backend.hpp"
#include "bayescoh/cache.hpp"

namespace bayescoh {

// Process exit codes shared by every subcommand.
namespace exit_code {
inline constexpr int kOk = 0;
// Bad invocation or the command ran and the answer is "not OK" (for
// example, a dataset with validation errors).
inline constexpr int kFailure = 1;
// Input files that cannot be parsed or violate their schema.
inline constexpr int kBadInput = 2;
// The scoring backend failed (transport, protocol, auth, binding, cache).
inline constexpr int kBackendFailure = 3;
// Not enough data for the requested statistic.
inline constexpr int kInsufficientData = 4;
// A temperature the backend cannot honour.
inline constexpr int kUnsupportedTemperature = 5;
}  // namespace exit_code

// Environment variables consulted when flags and config file are silent.
inline constexpr const char* kEnvEndpoint = "BAYESCOH_ENDPOINT";
inline constexpr const char* kEnvApiKey = "BAYESCOH_API_KEY";
inline constexpr const char* kEnvCache = "BAYESCOH_CACHE";

// Everything a scoring run needs, after flag/env/config-file resolution.
struct RunConfig {
  std::string dataset_path;
  std::string backend_spec;
  double temperature = 1.0;
  std::string policy = "default";
  std::size_t concurrency = 4;
  std::string cache_path;  // empty disables caching
  std::string output_dir = ".";
  std::string fail_mode = "fast";  // or "skip"
  std::optional<std::uint64_t> shuffle_seed;
  std::string endpoint;  // remote backends without an inline URL
  std::string api_key;
  bool remote_temperature_scaling = false;
};

// Tracks which fields the command line set explicitly, so the precedence
// flags > environment > config file > defaults can be applied.
struct RunConfigOverrides {
  std::optional<std::string> dataset_path;
  std::optional<std::string> backend_spec;
  std::optional<double> temperature;
  std::optional<std::string> policy;
  std::optional<std::size_t> concurrency;
  std::optional<std::string> cache_path;
  std::optional<std::string> output_dir;
  std::optional<std::string> fail_mode;
  std::optional<std::uint64_t> shuffle_seed;
  std::optional<std::string> endpoint;
  std::optional<std::string> api_key;
  std::optional<bool> remote_temperature_scaling;
};

// Applies the precedence chain. `config_file` may be empty (no file).
// Throws ParseError/SchemaError for an unreadable or malformed file.
RunConfig resolve_config(const RunConfigOverrides& overrides, const std::string& config_file);

// Resolved configuration as JSON, with the API key masked.
std::string render_config(const RunConfig& config);

// Builds a backend from a spec string:
//   uniform:<vocab_size>
//   oracle:<world.json>
//   noisy:<world.json>,<gradient>,<noise_sd>,<seed>
//   remote:<url>[,<backend_id>]   (bare "remote" uses config.endpoint)
// Wraps it in the score cache when config.cache_path is set; `store_out`
// (optional) receives the store so callers can inspect it.
BackendPtr make_backend(const RunConfig& config,
                        std::shared_ptr<CacheStore>* store_out = nullptr);

// Subcommand bodies. They write human output to `out` and throw library
// errors; run_cli maps those onto exit codes.
int cmd_validate(const std::string& dataset_path, const std::string& tokens_mode, bool as_json,
                 std::ostream& out);
int cmd_score(const RunConfig& config, std::ostream& out);
int cmd_metrics(const std::string& tuples_path, const std::string& output_dir,
                std::size_t bin_count, bool svg, std::ostream& out);
int cmd_sweep(const RunConfig& config, const std::vector<double>& temperatures,
              std::ostream& out);
int cmd_meta(const std::string& rows_path, const std::string& output_dir, std::ostream& out);
int cmd_emit_prompt(const std::string& category_name, const std::string& exemplar_path,
                    const std::string& out_path, std::ostream& out);

// Full command-line entry point (parsing, dispatch, error-to-exit-code
// mapping). `argv[0]` is the program name, as in main().
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bayescoh
