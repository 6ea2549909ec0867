#include "bayescoh/assembly.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string render_segments(const std::vector<Segment>& segments, const Category& category,
                            const ClassLabel& cls, const Evidence& evidence,
                            const std::string& history) {
  std::string out;
  for (Segment segment : segments) {
    switch (segment) {
      case Segment::History: out += history; break;
      case Segment::ClassElicitation: out += category.class_elicitation; break;
      case Segment::EvidenceElicitation: out += category.evidence_elicitation; break;
      case Segment::ClassText: out += cls.text; break;
      case Segment::EvidenceText: out += evidence.text; break;
    }
  }
  return out;
}

// Rethrows the stored exception with `prefix` prepended, preserving the
// concrete library type so callers can still map it to an exit code.
[[noreturn]] void rethrow_annotated(const std::exception_ptr& ep, const std::string& prefix) {
  try {
    std::rethrow_exception(ep);
  } catch (const TransportError& e) {
    throw TransportError(prefix + e.what());
  } catch (const AuthError& e) {
    throw AuthError(prefix + e.what());
  } catch (const UnsupportedTemperature& e) {
    throw UnsupportedTemperature(prefix + e.what());
  } catch (const TokenizationError& e) {
    throw TokenizationError(prefix + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(prefix + e.what());
  } catch (const BindingError& e) {
    throw BindingError(prefix + e.what());
  } catch (const ConstructionError& e) {
    throw ConstructionError(prefix + e.what());
  } catch (const StoreError& e) {
    throw StoreError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

std::string tuple_prefix(std::size_t index, const TupleRecord& record) {
  std::ostringstream out;
  out << "tuple #" << index << " (" << record.category << ", \"" << record.class_1 << "\" vs \""
      << record.class_2 << "\", evidence \"" << record.evidence << "\", history "
      << record.history << "): ";
  return out.str();
}

void set_number_field(ordered_json& doc, const char* key, double value) {
  // nlohmann serializes non-finite doubles as null on its own; being
  // explicit here documents that the nulls are intentional.
  if (std::isfinite(value)) {
    doc[key] = value;
  } else {
    doc[key] = nullptr;
  }
}

double get_number_field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) {
    throw SchemaError(std::string("record is missing field \"") + key + "\"");
  }
  if (it->is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!it->is_number()) {
    throw SchemaError(std::string("record field \"") + key + "\" must be a number or null");
  }
  return it->get<double>();
}

std::string get_string_field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw SchemaError(std::string("record is missing string field \"") + key + "\"");
  }
  return it->get<std::string>();
}

}  // namespace

AssemblyPolicy AssemblyPolicy::standard() {
  AssemblyPolicy policy;
  policy.id = "default";
  policy.prior_context = {Segment::History, Segment::ClassElicitation};
  policy.likelihood_context = {Segment::History, Segment::ClassElicitation, Segment::ClassText,
                               Segment::EvidenceElicitation};
  policy.posterior_context = {Segment::History, Segment::EvidenceElicitation,
                              Segment::EvidenceText, Segment::ClassElicitation};
  return policy;
}

AssemblyPolicy AssemblyPolicy::by_id(const std::string& id) {
  if (id == "default") return standard();
  if (id == "no-history") {
    // Ablation: identical probes without the conversation history, to
    // measure how much the history itself anchors the scores.
    AssemblyPolicy policy = standard();
    policy.id = "no-history";
    auto strip = [](std::vector<Segment>& segments) {
      segments.erase(std::remove(segments.begin(), segments.end(), Segment::History),
                     segments.end());
    };
    strip(policy.prior_context);
    strip(policy.likelihood_context);
    strip(policy.posterior_context);
    return policy;
  }
  throw Error("unknown assembly policy \"" + id + "\"; known: default, no-history");
}

std::vector<std::string> AssemblyPolicy::known_ids() { return {"default", "no-history"}; }

ProbeContexts build_contexts(const Category& category, const ClassLabel& cls,
                             const Evidence& evidence, const std::string& history,
                             const AssemblyPolicy& policy) {
  ProbeContexts out;
  out.prior_context = render_segments(policy.prior_context, category, cls, evidence, history);
  out.likelihood_context =
      render_segments(policy.likelihood_context, category, cls, evidence, history);
  out.posterior_context =
      render_segments(policy.posterior_context, category, cls, evidence, history);
  out.class_continuation = cls.text;
  out.evidence_continuation = evidence.text;
  return out;
}

void finalize_record(TupleRecord& record) {
  record.delta_expected = record.log_lik_1 - record.log_lik_2;
  record.delta_observed =
      (record.log_post_1 - record.log_post_2) - (record.log_prior_1 - record.log_prior_2);
  record.avg_evidence_loglik = (record.log_lik_1 + record.log_lik_2) / 2.0;
  record.avg_class_logprob =
      (record.log_prior_1 + record.log_prior_2 + record.log_post_1 + record.log_post_2) / 4.0;
}

ScoreRun score_tuples(const Dataset& dataset, const ModelBackend& backend,
                      const ScoreOptions& options) {
  if (options.temperature != 1.0 && !backend.supports_temperature_scaling()) {
    throw UnsupportedTemperature("backend \"" + backend.id() +
                                 "\" cannot rescale distributions to temperature " +
                                 format_double(options.temperature));
  }
  std::vector<TupleRef> tuples = enumerate_tuples(dataset);
  const std::size_t n = tuples.size();

  std::vector<std::optional<TupleRecord>> results(n);
  std::vector<std::exception_ptr> failures(n);

  std::vector<std::size_t> issue_order(n);
  std::iota(issue_order.begin(), issue_order.end(), std::size_t{0});
  if (options.issue_shuffle_seed) {
    SplitMix64 rng(*options.issue_shuffle_seed);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next() % i);
      std::swap(issue_order[i - 1], issue_order[j]);
    }
  }

  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> abort{false};
  const bool fail_fast = options.fail_mode == ScoreOptions::FailMode::Fast;

  auto score_one = [&](std::size_t index) {
    const TupleRef& ref = tuples[index];
    const Category& category = dataset.categories[ref.category];
    const ClassLabel& class_1 = category.classes[ref.class_a];
    const ClassLabel& class_2 = category.classes[ref.class_b];
    const Evidence& evidence = category.evidences[ref.evidence];
    const std::string& history = category.histories[ref.history];

    TupleRecord record;
    record.category = category.name;
    record.class_1 = class_1.text;
    record.class_2 = class_2.text;
    record.evidence = evidence.text;
    record.history = ref.history;

    ProbeContexts probes_1 = build_contexts(category, class_1, evidence, history, options.policy);
    ProbeContexts probes_2 = build_contexts(category, class_2, evidence, history, options.policy);
    double t = options.temperature;

    record.log_prior_1 =
        backend.score({probes_1.prior_context, probes_1.class_continuation, t}).cumulative;
    record.log_prior_2 =
        backend.score({probes_2.prior_context, probes_2.class_continuation, t}).cumulative;
    record.log_lik_1 =
        backend.score({probes_1.likelihood_context, probes_1.evidence_continuation, t}).cumulative;
    record.log_lik_2 =
        backend.score({probes_2.likelihood_context, probes_2.evidence_continuation, t}).cumulative;
    record.log_post_1 =
        backend.score({probes_1.posterior_context, probes_1.class_continuation, t}).cumulative;
    record.log_post_2 =
        backend.score({probes_2.posterior_context, probes_2.class_continuation, t}).cumulative;

    finalize_record(record);
    results[index] = std::move(record);
  };

  auto worker = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= n) return;
      if (fail_fast && abort.load()) return;
      std::size_t index = issue_order[i];
      try {
        score_one(index);
      } catch (...) {
        failures[index] = std::current_exception();
        if (fail_fast) abort.store(true);
      }
    }
  };

  std::size_t workers = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& thread : pool) thread.join();
  }

  ScoreRun run;
  run.tuple_count = n;
  for (std::size_t index = 0; index < n; ++index) {
    if (failures[index]) {
      // Reconstruct the coordinates for the message; the record may not
      // have been filled in before the failure.
      const TupleRef& ref = tuples[index];
      const Category& category = dataset.categories[ref.category];
      TupleRecord coords;
      coords.category = category.name;
      coords.class_1 = category.classes[ref.class_a].text;
      coords.class_2 = category.classes[ref.class_b].text;
      coords.evidence = category.evidences[ref.evidence].text;
      coords.history = ref.history;
      std::string prefix = tuple_prefix(index, coords);
      if (fail_fast) {
        rethrow_annotated(failures[index], prefix);
      }
      std::string message;
      try {
        std::rethrow_exception(failures[index]);
      } catch (const std::exception& e) {
        message = e.what();
      }
      run.skipped.push_back(SkippedTuple{index, coords.category, coords.class_1, coords.class_2,
                                         coords.evidence, coords.history, message});
    } else if (results[index]) {
      run.records.push_back(std::move(*results[index]));
    }
    // In fail-fast mode a tuple can be neither scored nor failed only when
    // the run aborted early, and then the rethrow above fires first.
  }
  return run;
}

std::string record_to_json_line(const TupleRecord& record) {
  ordered_json doc;
  doc["category"] = record.category;
  doc["class_1"] = record.class_1;
  doc["class_2"] = record.class_2;
  doc["evidence"] = record.evidence;
  doc["history"] = record.history;
  set_number_field(doc, "log_prior_1", record.log_prior_1);
  set_number_field(doc, "log_prior_2", record.log_prior_2);
  set_number_field(doc, "log_post_1", record.log_post_1);
  set_number_field(doc, "log_post_2", record.log_post_2);
  set_number_field(doc, "log_lik_1", record.log_lik_1);
  set_number_field(doc, "log_lik_2", record.log_lik_2);
  set_number_field(doc, "delta_expected", record.delta_expected);
  set_number_field(doc, "delta_observed", record.delta_observed);
  set_number_field(doc, "avg_evidence_loglik", record.avg_evidence_loglik);
  set_number_field(doc, "avg_class_logprob", record.avg_class_logprob);
  return doc.dump();
}

TupleRecord record_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("record lines must be JSON objects");
  TupleRecord record;
  record.category = get_string_field(doc, "category");
  record.class_1 = get_string_field(doc, "class_1");
  record.class_2 = get_string_field(doc, "class_2");
  record.evidence = get_string_field(doc, "evidence");
  auto hist_it = doc.find("history");
  if (hist_it == doc.end() || !hist_it->is_number_unsigned()) {
    throw SchemaError("record field \"history\" must be a nonnegative integer");
  }
  record.history = hist_it->get<std::size_t>();
  record.log_prior_1 = get_number_field(doc, "log_prior_1");
  record.log_prior_2 = get_number_field(doc, "log_prior_2");
  record.log_post_1 = get_number_field(doc, "log_post_1");
  record.log_post_2 = get_number_field(doc, "log_post_2");
  record.log_lik_1 = get_number_field(doc, "log_lik_1");
  record.log_lik_2 = get_number_field(doc, "log_lik_2");
  record.delta_expected = get_number_field(doc, "delta_expected");
  record.delta_observed = get_number_field(doc, "delta_observed");
  record.avg_evidence_loglik = get_number_field(doc, "avg_evidence_loglik");
  record.avg_class_logprob = get_number_field(doc, "avg_class_logprob");
  return record;
}

void write_records_jsonl(const std::filesystem::path& path,
                         const std::vector<TupleRecord>& records) {
  std::string content;
  for (const auto& record : records) {
    content += record_to_json_line(record);
    content += '\n';
  }
  atomic_write_file(path, content);
}

std::vector<TupleRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::string content = read_file(path);
  std::vector<TupleRecord> records;
  std::size_t line_start = 0;
  std::size_t line_number = 1;
  while (line_start < content.size()) {
    std::size_t line_end = content.find('\n', line_start);
    if (line_end == std::string::npos) line_end = content.size();
    std::string_view line(content.data() + line_start, line_end - line_start);
    if (!line.empty()) {
      json doc;
      try {
        doc = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_number) + ": " + e.what());
      }
      try {
        records.push_back(record_from_json(doc));
      } catch (const SchemaError& e) {
        throw SchemaError(path.string() + ":" + std::to_string(line_number) + ": " + e.what());
      }
    }
    line_start = line_end + 1;
    ++line_number;
  }
  return records;
}

nlohmann::ordered_json manifest_to_json(const RunManifest& manifest) {
  ordered_json doc;
  doc["dataset_source"] = manifest.dataset_source;
  doc["dataset_sha256"] = manifest.dataset_sha256;
  doc["backend_id"] = manifest.backend_id;
  doc["temperature"] = manifest.temperature;
  doc["assembly_policy"] = manifest.assembly_policy;
  doc["tuple_count"] = manifest.tuple_count;
  doc["scored"] = manifest.scored;
  ordered_json skipped = ordered_json::array();
  for (const auto& skip : manifest.skipped) {
    ordered_json entry;
    entry["tuple_index"] = skip.tuple_index;
    entry["category"] = skip.category;
    entry["class_1"] = skip.class_1;
    entry["class_2"] = skip.class_2;
    entry["evidence"] = skip.evidence;
    entry["history"] = skip.history;
    entry["error"] = skip.error;
    skipped.push_back(std::move(entry));
  }
  doc["skipped"] = std::move(skipped);
  doc["started_at"] = manifest.started_at;
  doc["finished_at"] = manifest.finished_at;
  return doc;
}

}  // namespace bayescoh
