#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bayescoh/backend.hpp"
#include "bayescoh/dataset.hpp"

namespace bayescoh {

// Building blocks a context can be assembled from. Concatenation is always
// byte-exact with no separators added: the dataset strings carry their own
// leading spaces and punctuation.
enum class Segment {
  History,
  ClassElicitation,
  EvidenceElicitation,
  ClassText,     // the class under the *other* role, e.g. conditioning a likelihood
  EvidenceText,  // the evidence embedded in a posterior context
};

// How the three probe contexts are assembled from a (class, evidence,
// history) combination. Policies are looked up by id so runs can record
// which construction produced their scores.
struct AssemblyPolicy {
  std::string id;
  std::vector<Segment> prior_context;
  std::vector<Segment> likelihood_context;
  std::vector<Segment> posterior_context;

  // The standard construction:
  //   prior:      history + class_elicitation              | continuation: class
  //   likelihood: history + class_elicitation + class
  //               + evidence_elicitation                   | continuation: evidence
  //   posterior:  history + evidence_elicitation + evidence
  //               + class_elicitation                      | continuation: class
  static AssemblyPolicy standard();

  // Registry lookup; throws Error for an unknown id. "default" names the
  // standard construction.
  static AssemblyPolicy by_id(const std::string& id);
  static std::vector<std::string> known_ids();
};

// The three fully assembled context/continuation pairs for one class within
// a tuple.
struct ProbeContexts {
  std::string prior_context;
  std::string likelihood_context;
  std::string posterior_context;
  std::string class_continuation;     // scored after prior and posterior contexts
  std::string evidence_continuation;  // scored after the likelihood context
};

ProbeContexts build_contexts(const Category& category, const ClassLabel& cls,
                             const Evidence& evidence, const std::string& history,
                             const AssemblyPolicy& policy = AssemblyPolicy::standard());

// One fully scored tuple: both classes of the pair probed for prior,
// likelihood, and posterior, plus the derived comparison quantities.
struct TupleRecord {
  std::string category;
  std::string class_1;
  std::string class_2;
  std::string evidence;
  std::size_t history = 0;  // index within the category

  double log_prior_1 = 0, log_prior_2 = 0;
  double log_post_1 = 0, log_post_2 = 0;
  double log_lik_1 = 0, log_lik_2 = 0;

  // log L(x|c1) - log L(x|c2): how much the evidence favours class 1.
  double delta_expected = 0;
  // (log P(c1|x) - log P(c2|x)) - (log P(c1) - log P(c2)): how much the
  // scores actually moved.
  double delta_observed = 0;
  // Covariates for binned analysis.
  double avg_evidence_loglik = 0;  // mean of the two likelihood scores
  double avg_class_logprob = 0;    // mean of the four class scores
};

// Fills in the four derived fields from the six raw scores.
void finalize_record(TupleRecord& record);

// --- scoring runs ---------------------------------------------------------------

struct ScoreOptions {
  double temperature = 1.0;
  AssemblyPolicy policy = AssemblyPolicy::standard();
  // Upper bound on concurrently outstanding backend calls.
  std::size_t concurrency = 1;
  // Fast: the first failing tuple aborts the run (lowest tuple index wins
  // when several fail in flight). Skip: failing tuples are recorded and the
  // run continues.
  enum class FailMode { Fast, Skip } fail_mode = FailMode::Fast;
  // When set, tuples are *issued* to the backend in a seeded shuffled order.
  // Results are identical either way; this exists to exercise and test
  // order independence.
  std::optional<std::uint64_t> issue_shuffle_seed;
};

struct SkippedTuple {
  std::size_t tuple_index = 0;
  std::string category;
  std::string class_1;
  std::string class_2;
  std::string evidence;
  std::size_t history = 0;
  std::string error;
};

struct ScoreRun {
  std::vector<TupleRecord> records;     // in enumeration order, failures omitted
  std::vector<SkippedTuple> skipped;    // in enumeration order
  std::size_t tuple_count = 0;          // records.size() + skipped.size()
};

// Scores every tuple of `dataset` against `backend`: six scores per tuple
// (prior, likelihood, posterior for each class of the pair). Record order is
// the enumeration order of the dataset regardless of concurrency or issue
// order. In Fast mode the failure annotated with its tuple coordinates is
// rethrown with its original type.
ScoreRun score_tuples(const Dataset& dataset, const ModelBackend& backend,
                      const ScoreOptions& options = {});

// --- serialization ----------------------------------------------------------------

// One record per line, fixed key order, shortest round-trip numbers.
// Non-finite scores serialize as JSON null and read back as NaN.
std::string record_to_json_line(const TupleRecord& record);
TupleRecord record_from_json(const nlohmann::json& doc);
void write_records_jsonl(const std::filesystem::path& path,
                         const std::vector<TupleRecord>& records);
std::vector<TupleRecord> read_records_jsonl(const std::filesystem::path& path);

// Sidecar describing a scoring run; the only place timestamps appear, so
// score artifacts themselves stay byte-reproducible.
struct RunManifest {
  std::string dataset_source;
  std::string dataset_sha256;
  std::string backend_id;
  double temperature = 1.0;
  std::string assembly_policy;
  std::size_t tuple_count = 0;
  std::size_t scored = 0;
  std::vector<SkippedTuple> skipped;
  std::string started_at;
  std::string finished_at;
};

nlohmann::ordered_json manifest_to_json(const RunManifest& manifest);

}  // namespace bayescoh
