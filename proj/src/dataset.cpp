#include "bayescoh/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string where(std::string_view source, std::size_t index, std::string_view name) {
  std::ostringstream out;
  out << source << ": category #" << index;
  if (!name.empty()) out << " (\"" << name << "\")";
  return out.str();
}

const json& require_field(const json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(ctx + ": missing required field \"" + key + "\"");
  return *it;
}

std::string require_string(const json& value, const char* key, const std::string& ctx,
                           bool allow_empty = false) {
  if (!value.is_string()) throw SchemaError(ctx + ": field \"" + key + "\" must be a string");
  auto text = value.get<std::string>();
  if (!allow_empty && text.empty()) {
    throw SchemaError(ctx + ": field \"" + key + "\" must not be empty");
  }
  return text;
}

std::vector<std::string> parse_histories(const json& value, const std::string& ctx) {
  std::vector<std::string> histories;
  if (value.is_string()) {
    histories.push_back(value.get<std::string>());
  } else if (value.is_array()) {
    for (const auto& item : value) {
      if (!item.is_string()) {
        throw SchemaError(ctx + ": \"conversation_history\" entries must be strings");
      }
      histories.push_back(item.get<std::string>());
    }
  } else {
    throw SchemaError(ctx + ": \"conversation_history\" must be a string or array of strings");
  }
  return histories;
}

Evidence parse_evidence_item(const json& value, const std::string& ctx) {
  Evidence ev;
  if (value.is_string()) {
    ev.text = value.get<std::string>();
  } else if (value.is_object()) {
    ev.text = require_string(require_field(value, "evidence_text", ctx), "evidence_text", ctx);
    if (auto it = value.find("category"); it != value.end()) {
      ev.tag = require_string(*it, "category", ctx, /*allow_empty=*/true);
    }
    if (auto it = value.find("points_to_classes"); it != value.end()) {
      if (!it->is_array()) {
        throw SchemaError(ctx + ": \"points_to_classes\" must be an array of strings");
      }
      for (const auto& name : *it) {
        if (!name.is_string()) {
          throw SchemaError(ctx + ": \"points_to_classes\" must be an array of strings");
        }
        ev.points_to_classes.push_back(name.get<std::string>());
      }
    }
  } else {
    throw SchemaError(ctx + ": \"evidence\" entries must be strings or objects");
  }
  if (ev.text.empty()) throw SchemaError(ctx + ": evidence text must not be empty");
  return ev;
}

Category parse_category(const json& value, std::string_view source, std::size_t index) {
  if (!value.is_object()) {
    throw SchemaError(where(source, index, "") + ": category entries must be objects");
  }
  std::string pre = where(source, index, "");
  Category cat;
  cat.name = require_string(require_field(value, "class_type", pre), "class_type", pre);
  std::string ctx = where(source, index, cat.name);

  cat.histories = parse_histories(require_field(value, "conversation_history", ctx), ctx);

  const json& classes = require_field(value, "candidate_classes", ctx);
  if (!classes.is_array()) {
    throw SchemaError(ctx + ": \"candidate_classes\" must be an array of strings");
  }
  for (const auto& item : classes) {
    if (!item.is_string()) {
      throw SchemaError(ctx + ": \"candidate_classes\" must be an array of strings");
    }
    auto text = item.get<std::string>();
    if (text.empty()) throw SchemaError(ctx + ": class text must not be empty");
    cat.classes.push_back(ClassLabel{std::move(text)});
  }
  if (cat.classes.size() < 2) {
    throw SchemaError(ctx + ": needs at least 2 candidate classes, got " +
                      std::to_string(cat.classes.size()));
  }
  std::set<std::string> seen;
  for (const auto& cls : cat.classes) {
    if (!seen.insert(cls.text).second) {
      throw SchemaError(ctx + ": duplicate class \"" + cls.text + "\"");
    }
  }

  cat.class_elicitation =
      require_string(require_field(value, "class_elicitation", ctx), "class_elicitation", ctx);
  cat.evidence_elicitation = require_string(require_field(value, "evidence_elicitation", ctx),
                                            "evidence_elicitation", ctx);

  const json& evidence = require_field(value, "evidence", ctx);
  if (evidence.is_array()) {
    for (const auto& item : evidence) cat.evidences.push_back(parse_evidence_item(item, ctx));
  } else {
    cat.evidences.push_back(parse_evidence_item(evidence, ctx));
  }

  for (const auto& ev : cat.evidences) {
    for (const auto& target : ev.points_to_classes) {
      bool known = std::any_of(cat.classes.begin(), cat.classes.end(),
                               [&](const ClassLabel& c) { return c.text == target; });
      if (!known) {
        throw ReferenceError(ctx + ": evidence \"" + ev.text +
                             "\" points to unknown class \"" + target + "\"");
      }
    }
  }
  return cat;
}

void push_finding(std::vector<ValidationFinding>& sink, std::string category, std::string rule,
                  std::string message) {
  sink.push_back(ValidationFinding{std::move(category), std::move(rule), std::move(message)});
}

void sort_findings(std::vector<ValidationFinding>& findings) {
  std::sort(findings.begin(), findings.end(),
            [](const ValidationFinding& a, const ValidationFinding& b) {
              return std::tie(a.category, a.rule, a.message) <
                     std::tie(b.category, b.rule, b.message);
            });
}

ordered_json findings_to_json(const std::vector<ValidationFinding>& findings) {
  ordered_json arr = ordered_json::array();
  for (const auto& f : findings) {
    ordered_json obj;
    obj["category"] = f.category;
    obj["rule"] = f.rule;
    obj["message"] = f.message;
    arr.push_back(std::move(obj));
  }
  return arr;
}

// The instruction paragraph shown to a model when asking it to author a new
// category block. The trailing assignment names the category to generate.
constexpr std::string_view kPromptBody =
    "Data is to be generated according to the provided JSON schema. Please follow the schema "
    "exactly. There is also an example in JSON format provided. In the example the "
    "{class_category} is \"novelists\". Now based on the JSON schema and the example, please "
    "create data for a {class_category} \"desired class category\". There should be at least 5 "
    "{candidate_classes} in this category. Ensure that each of the {candidate_classes} has "
    "exactly the same number of tokens - this includes the punctuation, the space at the "
    "beginning of a class and the full stop at the end. The number of tokens should be at most 3 "
    "- use as few tokens as possible. If the {class_category} is a proper noun, then the first "
    "letter of each word of the class should be capitalized. If the {class_category} is not a "
    "proper noun then the first letter of each word should not be capitalized. There should be "
    "at least 3 {histories}, varying in how related they are to the {class_category} (from "
    "completely unrelated to very related). There should be at least 20 pieces of "
    "{evidence_text}. Some pieces of the evidence text should provide high evidence for one of "
    "the classes, other pieces of evidence text should provide evidence for several or all of "
    "the candidate classes and some pieces of evidence text should provide evidence for none of "
    "the candidate classes. Each {evidence_text} should be accompanied by an array "
    "{points_to_classes}, which is a list of classes in {class_category} that the evidence "
    "supports. This could be a single class, more than one class, all classes in the "
    "{class_category} or none (i.e. an empty list). The {evidence_elicitation} joined with the "
    "{evidence_text} should form a grammatically correct sentence including spaces and "
    "punctuation. The {class_elicitation} joined with each {class} should form a grammatically "
    "correct sentence including spaces and punctuation. It is important to follow the example "
    "for {class_elicitation} and {evidence_elicitation} including spaces and other punctuation. "
    "\"desired class category\" = ";

constexpr std::string_view kCategorySchema = R"({
  "schema": "https://json-schema.org/draft/2020-12/schema",
  "type": "object",
  "properties": {
    "bayesian_reasoning": {
      "type": "array",
      "items": {
        "type": "object",
        "properties": {
          "conversation_history": {
            "type": "string",
            "description": "the conversation history"
          },
          "candidate_classes": {
            "type": "array",
            "items": {
              "type": "string"
            },
            "minItems": 2,
            "uniqueItems": true,
            "description": "list of candidate classes"
          },
          "evidence": {
            "type": "string",
            "description": "justification or rationale for the classification"
          },
          "class_elicitation": {
            "type": "string",
            "description": "prompt used to elicit a candidate class"
          },
          "evidence_elicitation": {
            "type": "string",
            "description": "prompt used to elicit the evidence"
          }
        },
        "required": [
          "conversation_history",
          "candidate_classes",
          "evidence",
          "class_elicitation",
          "evidence_elicitation"
        ]
      }
    }
  },
  "required": ["bayesian_reasoning"]
})";

}  // namespace

Dataset parse_dataset(std::string_view json_text, std::string source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!doc.is_object()) throw SchemaError(source + ": top-level value must be an object");
  auto it = doc.find("bayesian_reasoning");
  if (it == doc.end()) {
    throw SchemaError(source + ": missing required field \"bayesian_reasoning\"");
  }
  if (!it->is_array()) {
    throw SchemaError(source + ": \"bayesian_reasoning\" must be an array");
  }

  Dataset dataset;
  dataset.source = source;
  std::set<std::string> names;
  std::size_t index = 0;
  for (const auto& entry : *it) {
    Category cat = parse_category(entry, source, index);
    if (!names.insert(cat.name).second) {
      throw SchemaError(source + ": duplicate category \"" + cat.name + "\"");
    }
    dataset.categories.push_back(std::move(cat));
    ++index;
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path), path.string());
}

nlohmann::ordered_json dataset_to_json(const Dataset& dataset) {
  ordered_json root;
  ordered_json arr = ordered_json::array();
  for (const auto& cat : dataset.categories) {
    ordered_json entry;
    entry["class_type"] = cat.name;
    entry["conversation_history"] = cat.histories;
    ordered_json classes = ordered_json::array();
    for (const auto& cls : cat.classes) classes.push_back(cls.text);
    entry["candidate_classes"] = std::move(classes);
    entry["class_elicitation"] = cat.class_elicitation;
    entry["evidence_elicitation"] = cat.evidence_elicitation;
    ordered_json evidences = ordered_json::array();
    for (const auto& ev : cat.evidences) {
      ordered_json obj;
      if (!ev.tag.empty()) obj["category"] = ev.tag;
      obj["evidence_text"] = ev.text;
      if (!ev.points_to_classes.empty()) obj["points_to_classes"] = ev.points_to_classes;
      evidences.push_back(std::move(obj));
    }
    entry["evidence"] = std::move(evidences);
    arr.push_back(std::move(entry));
  }
  root["bayesian_reasoning"] = std::move(arr);
  return root;
}

std::string serialize_dataset(const Dataset& dataset) {
  return dataset_to_json(dataset).dump(2) + "\n";
}

std::string dataset_sha256(const Dataset& dataset) {
  return sha256_hex(serialize_dataset(dataset));
}

ValidationReport validate(const Dataset& dataset, const TokenCounter& counter) {
  ValidationReport report;
  if (dataset.categories.empty()) {
    push_finding(report.warnings, "", "empty-dataset", "dataset contains no categories");
  }
  for (const auto& cat : dataset.categories) {
    if (cat.classes.size() < 5) {
      push_finding(report.warnings, cat.name, "min-classes",
                   "has " + std::to_string(cat.classes.size()) +
                       " classes; study design calls for at least 5");
    }
    if (cat.histories.size() < 3) {
      push_finding(report.warnings, cat.name, "min-histories",
                   "has " + std::to_string(cat.histories.size()) +
                       " conversation histories; study design calls for at least 3");
    }
    if (cat.evidences.size() < 20) {
      push_finding(report.warnings, cat.name, "min-evidences",
                   "has " + std::to_string(cat.evidences.size()) +
                       " evidences; study design calls for at least 20");
    }
    if (counter) {
      std::size_t first_count = 0;
      bool mismatch = false;
      for (std::size_t i = 0; i < cat.classes.size(); ++i) {
        std::size_t count = counter(cat.classes[i].text);
        report.class_token_counts[cat.classes[i].text] = count;
        if (i == 0) {
          first_count = count;
        } else if (count != first_count) {
          mismatch = true;
        }
        if (count > 3) {
          push_finding(report.warnings, cat.name, "class-token-limit",
                       "class \"" + cat.classes[i].text + "\" tokenizes to " +
                           std::to_string(count) + " tokens; limit is 3");
        }
      }
      if (mismatch) {
        std::ostringstream msg;
        msg << "classes tokenize to different lengths:";
        for (const auto& cls : cat.classes) {
          msg << " \"" << cls.text << "\"=" << report.class_token_counts[cls.text];
        }
        push_finding(report.errors, cat.name, "equal-token-count", msg.str());
      }
    }
  }
  sort_findings(report.errors);
  sort_findings(report.warnings);
  return report;
}

std::string render_validation_report(const ValidationReport& report) {
  std::ostringstream out;
  for (const auto& f : report.errors) {
    out << "error [" << f.rule << "]";
    if (!f.category.empty()) out << " " << f.category;
    out << ": " << f.message << "\n";
  }
  for (const auto& f : report.warnings) {
    out << "warning [" << f.rule << "]";
    if (!f.category.empty()) out << " " << f.category;
    out << ": " << f.message << "\n";
  }
  if (report.errors.empty() && report.warnings.empty()) out << "no findings\n";
  return out.str();
}

nlohmann::ordered_json validation_report_to_json(const ValidationReport& report) {
  ordered_json out;
  out["errors"] = findings_to_json(report.errors);
  out["warnings"] = findings_to_json(report.warnings);
  ordered_json counts = ordered_json::object();
  for (const auto& [text, count] : report.class_token_counts) counts[text] = count;
  out["class_token_counts"] = std::move(counts);
  out["ok"] = report.ok();
  return out;
}

std::vector<TupleRef> enumerate_tuples(const Dataset& dataset) {
  std::vector<TupleRef> tuples;
  tuples.reserve(expected_tuple_count(dataset));
  for (std::size_t ci = 0; ci < dataset.categories.size(); ++ci) {
    const Category& cat = dataset.categories[ci];
    for (std::size_t a = 0; a < cat.classes.size(); ++a) {
      for (std::size_t b = a + 1; b < cat.classes.size(); ++b) {
        for (std::size_t e = 0; e < cat.evidences.size(); ++e) {
          for (std::size_t h = 0; h < cat.histories.size(); ++h) {
            tuples.push_back(TupleRef{ci, a, b, e, h});
          }
        }
      }
    }
  }
  return tuples;
}

std::size_t expected_tuple_count(const Dataset& dataset) {
  std::size_t total = 0;
  for (const auto& cat : dataset.categories) {
    std::size_t n = cat.classes.size();
    total += (n * (n - 1) / 2) * cat.evidences.size() * cat.histories.size();
  }
  return total;
}

std::string emit_generation_prompt(std::string_view category_name, const Dataset& exemplar) {
  if (category_name.empty()) {
    throw std::invalid_argument("category name must not be empty");
  }
  std::string out;
  out += kPromptBody;
  out += '"';
  out += category_name;
  out += "\"\n\nJSON schema:\n\n";
  out += kCategorySchema;
  out += "\n\nExample:\n\n";
  out += serialize_dataset(exemplar);
  return out;
}

}  // namespace bayescoh
