#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace bayescoh {

// One answer option within a category, e.g. " Jane Austen.".
struct ClassLabel {
  std::string text;
  bool operator==(const ClassLabel&) const = default;
};

// One piece of evidence. `tag` is an optional free-form grouping label;
// `points_to_classes` optionally names the classes the evidence was written
// to favour (names must resolve within the owning category).
struct Evidence {
  std::string text;
  std::string tag;
  std::vector<std::string> points_to_classes;
  bool operator==(const Evidence&) const = default;
};

// A themed block: candidate classes, conversation histories, evidences, and
// the two elicitation strings used to build scoring contexts.
struct Category {
  std::string name;
  std::vector<std::string> histories;
  std::vector<ClassLabel> classes;
  std::vector<Evidence> evidences;
  std::string class_elicitation;
  std::string evidence_elicitation;
  bool operator==(const Category&) const = default;
};

struct Dataset {
  std::vector<Category> categories;
  std::string source;  // where it was loaded from, for messages only
  bool operator==(const Dataset& other) const { return categories == other.categories; }
};

// --- loading / serialization ------------------------------------------------

// Parses the canonical JSON form: an object with a "bayesian_reasoning"
// array of category objects. Accepts a bare string for a single
// conversation_history, a bare string or array of strings for evidence, and
// evidence objects carrying optional "category" / "points_to_classes".
// Throws ParseError (bad JSON), SchemaError (shape violations), or
// ReferenceError (points_to_classes naming an unknown class).
Dataset parse_dataset(std::string_view json_text, std::string source = "<memory>");
Dataset load_dataset(const std::filesystem::path& path);

// Canonical JSON rendering: stable field order, histories and evidences as
// arrays, optional evidence fields emitted only when set. parse_dataset of
// the output yields an equal Dataset.
nlohmann::ordered_json dataset_to_json(const Dataset& dataset);
std::string serialize_dataset(const Dataset& dataset);

// Content hash of the canonical serialization; stable across reformatting.
std::string dataset_sha256(const Dataset& dataset);

// --- validation ---------------------------------------------------------------

struct ValidationFinding {
  std::string category;  // empty for dataset-level findings
  std::string rule;      // stable kebab-case identifier
  std::string message;
  bool operator==(const ValidationFinding&) const = default;
};

struct ValidationReport {
  std::vector<ValidationFinding> errors;
  std::vector<ValidationFinding> warnings;
  // class text -> token count, populated when a token counter was supplied
  std::map<std::string, std::size_t> class_token_counts;
  bool ok() const { return errors.empty(); }
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

// Checks study-design conventions beyond structural validity. Rules:
//   empty-dataset     (warning)  no categories at all
//   min-classes       (warning)  fewer than 5 classes in a category
//   equal-token-count (error)    classes within a category tokenize to
//                                different lengths (needs `counter`)
//   class-token-limit (warning)  a class longer than 3 tokens
//   min-histories     (warning)  fewer than 3 conversation histories
//   min-evidences     (warning)  fewer than 20 evidences
// Findings are sorted by (category, rule, message) within each severity.
ValidationReport validate(const Dataset& dataset, const TokenCounter& counter = nullptr);

// Human-readable one-line-per-finding rendering, errors first.
std::string render_validation_report(const ValidationReport& report);
nlohmann::ordered_json validation_report_to_json(const ValidationReport& report);

// --- tuple enumeration --------------------------------------------------------

// Indices into a Dataset identifying one (class pair, evidence, history)
// combination within a category. class_a < class_b always.
struct TupleRef {
  std::size_t category = 0;
  std::size_t class_a = 0;
  std::size_t class_b = 0;
  std::size_t evidence = 0;
  std::size_t history = 0;
  bool operator==(const TupleRef&) const = default;
};

// All tuples in deterministic order: categories in dataset order, unordered
// class pairs (a < b) lexicographic by index, then evidences, then histories.
std::vector<TupleRef> enumerate_tuples(const Dataset& dataset);

// Closed-form count: sum over categories of C(|classes|, 2) * |evidences| *
// |histories|.
std::size_t expected_tuple_count(const Dataset& dataset);

// --- prompt emission ----------------------------------------------------------

// Renders the instruction prompt used to author new dataset categories:
// fixed task description ending with the requested category name, the JSON
// schema for a category block, and `exemplar` serialized verbatim as the
// worked example. Output is byte-stable for equal inputs. Throws
// std::invalid_argument for an empty category name.
std::string emit_generation_prompt(std::string_view category_name, const Dataset& exemplar);

}  // namespace bayescoh
