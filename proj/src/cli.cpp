#include "bayescoh/cli.hpp"

#include <cstdlib>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"

#include "bayescoh/assembly.hpp"
#include "bayescoh/dataset.hpp"
#include "bayescoh/errors.hpp"
#include "bayescoh/metrics.hpp"
#include "bayescoh/remote.hpp"
#include "bayescoh/report.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::optional<std::string> env_value(const char* name) {
  const char* value = std::getenv(name);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

// Picks the first present value along the precedence chain. Only the flag
// argument drives deduction so the others accept nullopt and conversions.
template <typename T>
T pick(const std::optional<T>& flag, const std::optional<std::type_identity_t<T>>& env,
       const std::optional<std::type_identity_t<T>>& file, std::type_identity_t<T> fallback) {
  if (flag) return *flag;
  if (env) return *env;
  if (file) return *file;
  return fallback;
}

template <typename T>
std::optional<T> file_value(const json& doc, const char* key) {
  if (!doc.is_object()) return std::nullopt;
  auto it = doc.find(key);
  if (it == doc.end()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config file: field \"") + key + "\" has the wrong type");
  }
}

ScoreOptions score_options_from(const RunConfig& config) {
  ScoreOptions options;
  options.temperature = config.temperature;
  options.policy = AssemblyPolicy::by_id(config.policy);
  options.concurrency = config.concurrency;
  if (config.fail_mode == "fast") {
    options.fail_mode = ScoreOptions::FailMode::Fast;
  } else if (config.fail_mode == "skip") {
    options.fail_mode = ScoreOptions::FailMode::Skip;
  } else {
    throw Error("fail mode must be \"fast\" or \"skip\", got \"" + config.fail_mode + "\"");
  }
  options.issue_shuffle_seed = config.shuffle_seed;
  return options;
}

void write_bins(const std::vector<TupleRecord>& records, const std::filesystem::path& out_dir,
                std::size_t bin_count, std::ostream& out) {
  for (Covariate covariate : {Covariate::AvgEvidenceLoglik, Covariate::AvgClassLogprob}) {
    std::string name = covariate_name(covariate);
    try {
      BinnedReport bins = binned_analysis(records, covariate, bin_count);
      emit_bins_csv(bins, out_dir / ("bins_" + name + ".csv"));
    } catch (const InsufficientData& e) {
      out << "bins over " << name << " skipped: " << e.what() << "\n";
    }
  }
}

std::optional<double> correlation_or_note(const std::vector<double>& xs,
                                          const std::vector<double>& ys, ordered_json& sink,
                                          const std::string& what) {
  try {
    Correlation corr = pearson(xs, ys, "score", "bcc");
    ordered_json entry;
    entry["n"] = corr.n;
    entry["r"] = corr.r;
    entry["p"] = corr.p;
    sink[what] = std::move(entry);
    return corr.r;
  } catch (const Error& e) {
    ordered_json entry;
    entry["n"] = xs.size();
    entry["r"] = nullptr;
    entry["p"] = nullptr;
    entry["note"] = e.what();
    sink[what] = std::move(entry);
    return std::nullopt;
  }
}

}  // namespace

RunConfig resolve_config(const RunConfigOverrides& overrides, const std::string& config_file) {
  json file_doc;
  if (!config_file.empty()) {
    try {
      file_doc = json::parse(read_file(config_file));
    } catch (const json::parse_error& e) {
      throw ParseError(config_file + ": " + e.what());
    }
    if (!file_doc.is_object()) throw SchemaError(config_file + ": must be a JSON object");
  }

  RunConfig config;
  RunConfig defaults;
  config.dataset_path = pick(overrides.dataset_path, std::nullopt,
                             file_value<std::string>(file_doc, "dataset"), defaults.dataset_path);
  config.backend_spec = pick(overrides.backend_spec, std::nullopt,
                             file_value<std::string>(file_doc, "backend"), defaults.backend_spec);
  config.temperature = pick(overrides.temperature, std::nullopt,
                            file_value<double>(file_doc, "temperature"), defaults.temperature);
  config.policy = pick(overrides.policy, std::nullopt, file_value<std::string>(file_doc, "policy"),
                       defaults.policy);
  config.concurrency =
      pick(overrides.concurrency, std::nullopt, file_value<std::size_t>(file_doc, "concurrency"),
           defaults.concurrency);
  config.cache_path = pick(overrides.cache_path, env_value(kEnvCache),
                           file_value<std::string>(file_doc, "cache"), defaults.cache_path);
  config.output_dir = pick(overrides.output_dir, std::nullopt,
                           file_value<std::string>(file_doc, "output_dir"), defaults.output_dir);
  config.fail_mode = pick(overrides.fail_mode, std::nullopt,
                          file_value<std::string>(file_doc, "fail_mode"), defaults.fail_mode);
  if (overrides.shuffle_seed) {
    config.shuffle_seed = overrides.shuffle_seed;
  } else if (auto seed = file_value<std::uint64_t>(file_doc, "shuffle_seed")) {
    config.shuffle_seed = seed;
  }
  config.endpoint = pick(overrides.endpoint, env_value(kEnvEndpoint),
                         file_value<std::string>(file_doc, "endpoint"), defaults.endpoint);
  config.api_key = pick(overrides.api_key, env_value(kEnvApiKey),
                        file_value<std::string>(file_doc, "api_key"), defaults.api_key);
  config.remote_temperature_scaling = pick(
      overrides.remote_temperature_scaling, std::nullopt,
      file_value<bool>(file_doc, "remote_temperature_scaling"),
      defaults.remote_temperature_scaling);
  return config;
}

std::string render_config(const RunConfig& config) {
  ordered_json doc;
  doc["dataset"] = config.dataset_path;
  doc["backend"] = config.backend_spec;
  doc["temperature"] = config.temperature;
  doc["policy"] = config.policy;
  doc["concurrency"] = config.concurrency;
  doc["cache"] = config.cache_path;
  doc["output_dir"] = config.output_dir;
  doc["fail_mode"] = config.fail_mode;
  if (config.shuffle_seed) {
    doc["shuffle_seed"] = *config.shuffle_seed;
  } else {
    doc["shuffle_seed"] = nullptr;
  }
  doc["endpoint"] = config.endpoint;
  doc["api_key"] = config.api_key.empty() ? "" : "****";
  doc["remote_temperature_scaling"] = config.remote_temperature_scaling;
  return doc.dump(2) + "\n";
}

BackendPtr make_backend(const RunConfig& config, std::shared_ptr<CacheStore>* store_out) {
  const std::string& spec = config.backend_spec;
  if (spec.empty()) throw Error("no backend specified (use --backend)");
  std::string kind = spec.substr(0, spec.find(':'));
  std::string rest = kind.size() < spec.size() ? spec.substr(kind.size() + 1) : "";

  BackendPtr backend;
  if (kind == "uniform") {
    std::size_t vocab = 0;
    try {
      vocab = std::stoull(rest);
    } catch (const std::exception&) {
      throw Error("uniform backend spec needs a vocabulary size, e.g. uniform:50000");
    }
    backend = std::make_shared<UniformBackend>(vocab);
  } else if (kind == "oracle") {
    if (rest.empty()) throw Error("oracle backend spec needs a world file, e.g. oracle:world.json");
    auto [world, binding] = load_world(rest);
    backend = std::make_shared<TabularOracleBackend>(std::move(world), std::move(binding));
  } else if (kind == "noisy") {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= rest.size()) {
      std::size_t comma = rest.find(',', start);
      if (comma == std::string::npos) {
        parts.push_back(rest.substr(start));
        break;
      }
      parts.push_back(rest.substr(start, comma - start));
      start = comma + 1;
    }
    if (parts.size() != 4) {
      throw Error("noisy backend spec is noisy:<world.json>,<gradient>,<noise_sd>,<seed>");
    }
    auto [world, binding] = load_world(parts[0]);
    double gradient = 0, noise_sd = 0;
    std::uint64_t seed = 0;
    try {
      gradient = std::stod(parts[1]);
      noise_sd = std::stod(parts[2]);
      seed = std::stoull(parts[3]);
    } catch (const std::exception&) {
      throw Error("noisy backend spec is noisy:<world.json>,<gradient>,<noise_sd>,<seed>");
    }
    backend = std::make_shared<NoisyUnderupdaterBackend>(std::move(world), gradient, noise_sd,
                                                         seed, std::move(binding));
  } else if (kind == "remote") {
    std::string url = rest;
    std::string id;
    std::size_t comma = rest.rfind(',');
    if (comma != std::string::npos) {
      url = rest.substr(0, comma);
      id = rest.substr(comma + 1);
    }
    if (url.empty()) url = config.endpoint;
    if (url.empty()) {
      throw Error("remote backend needs a URL (remote:<url> or the " + std::string(kEnvEndpoint) +
                  " environment variable)");
    }
    if (id.empty()) id = url;
    RemoteBackend::Options options;
    options.temperature_scaling = config.remote_temperature_scaling;
    backend = std::make_shared<RemoteBackend>(url, id, config.api_key, options);
  } else {
    throw Error("unknown backend kind \"" + kind +
                "\"; expected uniform:, oracle:, noisy:, or remote:");
  }

  if (!config.cache_path.empty()) {
    auto store = std::make_shared<CacheStore>(config.cache_path);
    if (store_out) *store_out = store;
    backend = cached(std::move(backend), store);
  }
  return backend;
}

int cmd_validate(const std::string& dataset_path, const std::string& tokens_mode, bool as_json,
                 std::ostream& out) {
  Dataset dataset = load_dataset(dataset_path);
  TokenCounter counter;
  if (tokens_mode == "whitespace") {
    counter = [](std::string_view text) { return whitespace_token_count(text); };
  } else if (tokens_mode != "none") {
    throw Error("unknown token counter \"" + tokens_mode + "\"; expected whitespace or none");
  }
  ValidationReport report = validate(dataset, counter);
  if (as_json) {
    out << validation_report_to_json(report).dump(2) << "\n";
  } else {
    out << render_validation_report(report);
  }
  return report.ok() ? exit_code::kOk : exit_code::kFailure;
}

int cmd_score(const RunConfig& config, std::ostream& out) {
  Dataset dataset = load_dataset(config.dataset_path);
  std::shared_ptr<CacheStore> store;
  BackendPtr backend = make_backend(config, &store);
  ScoreOptions options = score_options_from(config);

  RunManifest manifest;
  manifest.dataset_source = config.dataset_path;
  manifest.dataset_sha256 = dataset_sha256(dataset);
  manifest.backend_id = backend->id();
  manifest.temperature = config.temperature;
  manifest.assembly_policy = options.policy.id;
  manifest.started_at = utc_timestamp();

  ScoreRun run = score_tuples(dataset, *backend, options);

  manifest.finished_at = utc_timestamp();
  manifest.tuple_count = run.tuple_count;
  manifest.scored = run.records.size();
  manifest.skipped = run.skipped;

  std::filesystem::path out_dir = config.output_dir;
  write_records_jsonl(out_dir / "tuples.jsonl", run.records);
  atomic_write_file(out_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");

  if (store) {
    for (const auto& warning : store->warnings()) out << "warning: " << warning << "\n";
  }
  out << "scored " << run.records.size() << " of " << run.tuple_count << " tuples";
  if (!run.skipped.empty()) out << " (" << run.skipped.size() << " skipped)";
  out << " -> " << (out_dir / "tuples.jsonl").string() << "\n";
  return exit_code::kOk;
}

int cmd_metrics(const std::string& tuples_path, const std::string& output_dir,
                std::size_t bin_count, bool svg, std::ostream& out) {
  std::vector<TupleRecord> records = read_records_jsonl(tuples_path);
  MetricsReport report = compute_report(records);

  std::filesystem::path out_dir = output_dir;
  atomic_write_file(out_dir / "metrics.json", metrics_report_to_json(report).dump(2) + "\n");
  std::string table = render_metrics_table(report);
  atomic_write_file(out_dir / "table.txt", table);

  std::optional<std::filesystem::path> svg_path;
  if (svg) svg_path = out_dir / "scatter.svg";
  emit_scatter(records, out_dir / "scatter.csv", out_dir / "scatter.json", svg_path);

  write_bins(records, out_dir, bin_count, out);

  out << table;
  for (const auto& note : report.notes) out << "note: " << note << "\n";
  return exit_code::kOk;
}

int cmd_sweep(const RunConfig& config, const std::vector<double>& temperatures,
              std::ostream& out) {
  if (temperatures.empty()) throw Error("sweep needs at least one temperature");
  Dataset dataset = load_dataset(config.dataset_path);
  BackendPtr backend = make_backend(config);
  ScoreOptions options = score_options_from(config);

  std::vector<SweepPoint> points = temperature_sweep(dataset, *backend, temperatures, options);

  std::filesystem::path out_dir = config.output_dir;
  std::string csv = "temperature,n,bcc,bce,update_gradient,direction_agreement\n";
  for (const SweepPoint& point : points) {
    atomic_write_file(out_dir / ("metrics_tau_" + format_double(point.temperature) + ".json"),
                      metrics_report_to_json(point.report).dump(2) + "\n");
    csv += format_double(point.temperature);
    csv += ',';
    csv += std::to_string(point.report.n);
    csv += ',';
    if (point.report.bcc) csv += format_double(*point.report.bcc);
    csv += ',';
    csv += format_double(point.report.bce);
    csv += ',';
    if (point.report.update_gradient) csv += format_double(*point.report.update_gradient);
    csv += ',';
    csv += format_double(point.report.direction_agreement);
    csv += '\n';
  }
  atomic_write_file(out_dir / "sweep.csv", csv);

  for (const SweepPoint& point : points) {
    out << "tau=" << format_double(point.temperature) << " n=" << point.report.n << " bcc=";
    if (point.report.bcc) {
      out << format_double(*point.report.bcc);
    } else {
      out << "n/a";
    }
    out << " bce=" << format_double(point.report.bce) << "\n";
  }
  return exit_code::kOk;
}

int cmd_meta(const std::string& rows_path, const std::string& output_dir, std::ostream& out) {
  std::vector<ModelComparisonRow> rows = load_model_rows(rows_path);
  std::filesystem::path out_dir = output_dir;
  emit_model_table(rows, out_dir);

  std::vector<MetaPoint> points;
  points.reserve(rows.size());
  for (const auto& row : rows) {
    points.push_back(MetaPoint{row.label, row.params_billions, row.bcc});
  }
  Correlation scaling = scaling_correlation(points);

  ordered_json meta;
  ordered_json scaling_json;
  scaling_json["n"] = scaling.n;
  scaling_json["r"] = scaling.r;
  scaling_json["p"] = scaling.p;
  meta["scaling"] = std::move(scaling_json);

  ordered_json benchmarks = ordered_json::object();
  std::set<std::string> names;
  for (const auto& row : rows) {
    for (const auto& [name, _] : row.benchmark_scores) names.insert(name);
  }
  for (const auto& name : names) {
    std::vector<double> scores, bccs;
    for (const auto& row : rows) {
      auto it = row.benchmark_scores.find(name);
      if (it == row.benchmark_scores.end()) continue;
      scores.push_back(it->second);
      bccs.push_back(row.bcc);
    }
    correlation_or_note(scores, bccs, benchmarks, name);
  }
  meta["benchmarks"] = std::move(benchmarks);
  atomic_write_file(out_dir / "meta.json", meta.dump(2) + "\n");

  out << render_model_table(rows);
  out << "scaling: r=" << format_double(scaling.r) << " p=" << format_double(scaling.p)
      << " n=" << scaling.n << "\n";
  return exit_code::kOk;
}

int cmd_emit_prompt(const std::string& category_name, const std::string& exemplar_path,
                    const std::string& out_path, std::ostream& out) {
  Dataset exemplar = load_dataset(exemplar_path);
  std::string prompt = emit_generation_prompt(category_name, exemplar);
  if (out_path.empty()) {
    out << prompt;
  } else {
    atomic_write_file(out_path, prompt);
    out << "wrote " << out_path << "\n";
  }
  return exit_code::kOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Measures how consistently a language model updates its scores the way Bayes'"
               " theorem says it should."};
  app.require_subcommand(1);

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "Check a dataset against the data rules");
  std::string val_dataset;
  std::string val_tokens = "none";
  bool val_json = false;
  validate_cmd->add_option("dataset", val_dataset, "dataset JSON file")->required();
  validate_cmd->add_option("--tokens", val_tokens,
                           "token counter for class-length rules: whitespace or none");
  validate_cmd->add_flag("--json", val_json, "print the report as JSON");

  // shared scoring options
  RunConfigOverrides overrides;
  std::string config_file;
  bool print_config = false;
  auto add_scoring_options = [&](CLI::App* cmd, bool dataset_required) {
    auto opt = [&](auto& slot) {
      return [&slot](const auto& value) { slot = value; };
    };
    cmd->add_option_function<std::string>("dataset", opt(overrides.dataset_path),
                                          "dataset JSON file")
        ->required(dataset_required);
    cmd->add_option_function<std::string>("--backend", opt(overrides.backend_spec),
                                          "backend spec: uniform:<vocab>, oracle:<world.json>, "
                                          "noisy:<world.json>,<g>,<sd>,<seed>, remote:<url>[,<id>]");
    cmd->add_option_function<double>("--temperature", opt(overrides.temperature),
                                     "sampling temperature to score at (default 1)");
    cmd->add_option_function<std::string>("--policy", opt(overrides.policy),
                                          "context assembly policy id (default \"default\")");
    cmd->add_option_function<std::size_t>("--concurrency", opt(overrides.concurrency),
                                          "max in-flight backend calls (default 4)");
    cmd->add_option_function<std::string>("--cache", opt(overrides.cache_path),
                                          "score cache file (also " + std::string(kEnvCache) + ")");
    cmd->add_option_function<std::string>("--out", opt(overrides.output_dir),
                                          "output directory (default .)");
    cmd->add_option_function<std::string>("--fail-mode", opt(overrides.fail_mode),
                                          "fast (abort on first failure) or skip");
    cmd->add_option_function<std::uint64_t>("--shuffle-seed", opt(overrides.shuffle_seed),
                                            "score tuples in a seeded shuffled order");
    cmd->add_option_function<std::string>("--endpoint", opt(overrides.endpoint),
                                          "remote endpoint URL (also " +
                                              std::string(kEnvEndpoint) + ")");
    cmd->add_option_function<std::string>("--api-key", opt(overrides.api_key),
                                          "remote API key (also " + std::string(kEnvApiKey) + ")");
    cmd->add_flag_function("--remote-temperature-scaling",
                           [&](std::int64_t) { overrides.remote_temperature_scaling = true; },
                           "declare that the remote endpoint honours temperatures other than 1");
    cmd->add_option("--config", config_file, "JSON config file supplying defaults");
    cmd->add_flag("--print-config", print_config, "print the resolved configuration and exit");
  };

  auto* score_cmd = app.add_subcommand("score", "Score every tuple of a dataset");
  add_scoring_options(score_cmd, /*dataset_required=*/false);

  auto* sweep_cmd = app.add_subcommand("sweep-temp", "Score at several temperatures");
  std::vector<double> sweep_temperatures;
  add_scoring_options(sweep_cmd, /*dataset_required=*/false);
  sweep_cmd->add_option("--temperatures", sweep_temperatures, "temperatures to sweep")
      ->required()
      ->delimiter(',');

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute coherence metrics from tuples.jsonl");
  std::string metrics_tuples;
  std::string metrics_out = ".";
  std::size_t metrics_bins = 10;
  bool metrics_svg = false;
  metrics_cmd->add_option("tuples", metrics_tuples, "tuples.jsonl from a scoring run")->required();
  metrics_cmd->add_option("--out", metrics_out, "output directory (default .)");
  metrics_cmd->add_option("--bins", metrics_bins, "bin count for covariate analyses (default 10)");
  metrics_cmd->add_flag("--svg", metrics_svg, "also render scatter.svg");

  // meta
  auto* meta_cmd = app.add_subcommand("meta", "Cross-model comparison from evaluated rows");
  std::string meta_rows;
  std::string meta_out = ".";
  meta_cmd->add_option("rows", meta_rows, "JSON file of evaluated model rows")->required();
  meta_cmd->add_option("--out", meta_out, "output directory (default .)");

  // emit-prompt
  auto* prompt_cmd =
      app.add_subcommand("emit-prompt", "Render the dataset authoring prompt for a category");
  std::string prompt_category;
  std::string prompt_exemplar;
  std::string prompt_out;
  prompt_cmd->add_option("category", prompt_category, "category name to request")->required();
  prompt_cmd->add_option("--exemplar", prompt_exemplar, "exemplar dataset JSON")->required();
  prompt_cmd->add_option("--out", prompt_out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (validate_cmd->parsed()) {
      return cmd_validate(val_dataset, val_tokens, val_json, out);
    }
    if (score_cmd->parsed() || sweep_cmd->parsed()) {
      RunConfig config = resolve_config(overrides, config_file);
      if (print_config) {
        out << render_config(config);
        return exit_code::kOk;
      }
      if (config.dataset_path.empty()) throw Error("no dataset given (argument or config file)");
      if (score_cmd->parsed()) return cmd_score(config, out);
      return cmd_sweep(config, sweep_temperatures, out);
    }
    if (metrics_cmd->parsed()) {
      return cmd_metrics(metrics_tuples, metrics_out, metrics_bins, metrics_svg, out);
    }
    if (meta_cmd->parsed()) {
      return cmd_meta(meta_rows, meta_out, out);
    }
    if (prompt_cmd->parsed()) {
      return cmd_emit_prompt(prompt_category, prompt_exemplar, prompt_out, out);
    }
    err << "error: no subcommand\n";
    return exit_code::kFailure;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBadInput;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBadInput;
  } catch (const ReferenceError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBadInput;
  } catch (const ConstructionError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBadInput;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBadInput;
  } catch (const UnsupportedTemperature& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUnsupportedTemperature;
  } catch (const InsufficientData& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kInsufficientData;
  } catch (const TransportError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const AuthError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const TokenizationError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const BindingError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const StoreError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kBackendFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
}

}  // namespace bayescoh
