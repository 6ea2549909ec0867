#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <string>
#include <vector>

#include "bayescoh/dataset.hpp"
#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"
#include "test_support.hpp"

using namespace bayescoh;
using bayescoh::testing::source_dir;
using bayescoh::testing::TempDir;

namespace {

// A category satisfying every validation rule: 5 two-token classes, 3
// histories, 20 evidences.
Category compliant_category(const std::string& name = "fruits") {
  Category cat;
  cat.name = name;
  cat.histories = {"We compared orchard harvests.", "We talked about breakfast.",
                   "We discussed pie recipes."};
  cat.classes = {{" red apple."}, {" ripe banana."}, {" sour cherry."},
                 {" sweet grape."}, {" fresh mango."}};
  for (int i = 0; i < 20; ++i) {
    cat.evidences.push_back({" clue number " + std::to_string(i) + ".", "flavour", {}});
  }
  cat.class_elicitation = " My pick is";
  cat.evidence_elicitation = " I noticed";
  return cat;
}

Dataset compliant_dataset() {
  Dataset d;
  d.categories.push_back(compliant_category());
  return d;
}

}  // namespace

TEST_CASE("the bundled exemplar loads with the expected shape") {
  const Dataset d = load_dataset(source_dir() / "data" / "exemplar_novelists.json");
  REQUIRE(d.categories.size() == 1);
  const Category& cat = d.categories[0];
  CHECK(cat.name == "novelists");
  CHECK(cat.histories.size() == 1);
  REQUIRE(cat.classes.size() == 5);
  CHECK(cat.classes[2].text == " Jane Austen.");
  REQUIRE(cat.evidences.size() == 8);
  CHECK(cat.class_elicitation == " My favourite author is");
  CHECK(cat.evidence_elicitation == " I prefer reading");
  CHECK(cat.evidences[0].tag == "literary_analysis");
}

TEST_CASE("serialize/parse round-trips datasets exactly") {
  Dataset original = compliant_dataset();
  original.categories[0].evidences[3].points_to_classes = {" red apple.", " fresh mango."};
  original.categories[0].evidences[5].tag = "";

  const std::string text = serialize_dataset(original);
  const Dataset back = parse_dataset(text, "round-trip");
  CHECK(back == original);
  CHECK(serialize_dataset(back) == text);
  CHECK(dataset_sha256(back) == dataset_sha256(original));
}

TEST_CASE("dataset hashing ignores the source path") {
  Dataset a = compliant_dataset();
  Dataset b = compliant_dataset();
  a.source = "first.json";
  b.source = "second.json";
  CHECK(a == b);
  CHECK(dataset_sha256(a) == dataset_sha256(b));
}

TEST_CASE("flexible input forms parse to the same category") {
  // History as a bare string; evidences as bare strings, arrays, and objects.
  const std::string text = R"({
    "bayesian_reasoning": [
      {
        "class_type": "pets",
        "conversation_history": "We chatted about animals.",
        "candidate_classes": [" a calm dog.", " a proud cat."],
        "class_elicitation": " I own",
        "evidence_elicitation": " You can hear",
        "evidence": [
          " loud barking.",
          {"evidence_text": " quiet purring.", "category": "sound",
           "points_to_classes": [" a proud cat."]}
        ]
      }
    ]
  })";
  const Dataset d = parse_dataset(text);
  REQUIRE(d.categories.size() == 1);
  const Category& cat = d.categories[0];
  CHECK(cat.histories == std::vector<std::string>{"We chatted about animals."});
  REQUIRE(cat.evidences.size() == 2);
  CHECK(cat.evidences[0].text == " loud barking.");
  CHECK(cat.evidences[0].tag.empty());
  CHECK(cat.evidences[1].tag == "sound");
  CHECK(cat.evidences[1].points_to_classes == std::vector<std::string>{" a proud cat."});

  // The canonical serialization round-trips this equally.
  CHECK(parse_dataset(serialize_dataset(d)) == d);
}

TEST_CASE("structural violations raise typed errors") {
  CHECK_THROWS_AS((void)parse_dataset("{not json"), ParseError);
  CHECK_THROWS_AS((void)parse_dataset("[1, 2]"), SchemaError);
  CHECK_THROWS_AS((void)parse_dataset("{\"wrong_key\": []}"), SchemaError);

  Dataset d = compliant_dataset();
  SUBCASE("single class") {
    d.categories[0].classes.resize(1);
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), SchemaError);
  }
  SUBCASE("duplicate class text") {
    d.categories[0].classes[1] = d.categories[0].classes[0];
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), SchemaError);
  }
  SUBCASE("empty class elicitation") {
    d.categories[0].class_elicitation.clear();
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), SchemaError);
  }
  SUBCASE("empty evidence text") {
    d.categories[0].evidences[0].text.clear();
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), SchemaError);
  }
  SUBCASE("duplicate category name") {
    d.categories.push_back(compliant_category());
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), SchemaError);
  }
  SUBCASE("points_to_classes naming an unknown class") {
    d.categories[0].evidences[0].points_to_classes = {" rambutan."};
    CHECK_THROWS_AS((void)parse_dataset(serialize_dataset(d)), ReferenceError);
  }
  SUBCASE("missing required field") {
    auto doc = dataset_to_json(d);
    doc["bayesian_reasoning"][0].erase("evidence_elicitation");
    try {
      (void)parse_dataset(doc.dump());
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("evidence_elicitation") != std::string::npos);
    }
  }
}

TEST_CASE("schema errors carry the source name") {
  try {
    (void)parse_dataset("[]", "bad_input.json");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("bad_input.json") != std::string::npos);
  }
}

TEST_CASE("load_dataset reports missing files") {
  TempDir dir;
  CHECK_THROWS_AS((void)load_dataset(dir.file("absent.json")), SinkError);
}

TEST_CASE("a compliant dataset validates cleanly") {
  const ValidationReport report = validate(compliant_dataset(), whitespace_token_count);
  CHECK(report.ok());
  CHECK(report.errors.empty());
  CHECK(report.warnings.empty());
  CHECK(report.class_token_counts.at(" red apple.") == 2);
}

TEST_CASE("each design rule fires exactly for its own violation") {
  auto rules_of = [](const std::vector<ValidationFinding>& findings) {
    std::vector<std::string> rules;
    for (const auto& f : findings) rules.push_back(f.rule);
    return rules;
  };

  SUBCASE("too few classes") {
    Dataset d = compliant_dataset();
    d.categories[0].classes.resize(3);
    const auto report = validate(d, whitespace_token_count);
    CHECK(report.errors.empty());
    REQUIRE(report.warnings.size() == 1);
    CHECK(report.warnings[0].rule == "min-classes");
    CHECK(report.warnings[0].category == "fruits");
  }
  SUBCASE("unequal class token counts") {
    Dataset d = compliant_dataset();
    d.categories[0].classes[0].text = " crisp red apple.";  // 3 tokens vs 2
    const auto report = validate(d, whitespace_token_count);
    REQUIRE(report.errors.size() == 1);
    CHECK(report.errors[0].rule == "equal-token-count");
    CHECK(report.warnings.empty());
  }
  SUBCASE("token-count rule needs a counter") {
    Dataset d = compliant_dataset();
    d.categories[0].classes[0].text = " crisp red apple.";
    const auto report = validate(d, nullptr);
    CHECK(report.ok());  // cannot check without a tokenizer
    CHECK(report.class_token_counts.empty());
  }
  SUBCASE("too few histories") {
    Dataset d = compliant_dataset();
    d.categories[0].histories.resize(2);
    const auto report = validate(d, whitespace_token_count);
    CHECK(rules_of(report.warnings) == std::vector<std::string>{"min-histories"});
  }
  SUBCASE("too few evidences") {
    Dataset d = compliant_dataset();
    d.categories[0].evidences.resize(19);
    const auto report = validate(d, whitespace_token_count);
    CHECK(rules_of(report.warnings) == std::vector<std::string>{"min-evidences"});
  }
  SUBCASE("classes over the token limit") {
    Dataset d = compliant_dataset();
    for (auto& cls : d.categories[0].classes) cls.text = " very tasty fresh" + cls.text;
    const auto report = validate(d, whitespace_token_count);
    CHECK(report.errors.empty());  // still equal counts
    REQUIRE(!report.warnings.empty());
    for (const auto& w : report.warnings) CHECK(w.rule == "class-token-limit");
  }
  SUBCASE("empty dataset") {
    const auto report = validate(Dataset{}, whitespace_token_count);
    CHECK(rules_of(report.warnings) == std::vector<std::string>{"empty-dataset"});
  }
}

TEST_CASE("findings are sorted by category then rule") {
  Dataset d;
  d.categories.push_back(compliant_category("zebra"));
  d.categories.push_back(compliant_category("aardvark"));
  d.categories[0].histories.resize(1);   // zebra: min-histories
  d.categories[0].evidences.resize(5);   // zebra: min-evidences
  d.categories[1].classes.resize(2);     // aardvark: min-classes

  const auto report = validate(d, whitespace_token_count);
  REQUIRE(report.warnings.size() == 3);
  CHECK(report.warnings[0].category == "aardvark");
  CHECK(report.warnings[0].rule == "min-classes");
  CHECK(report.warnings[1].category == "zebra");
  CHECK(report.warnings[1].rule == "min-evidences");
  CHECK(report.warnings[2].category == "zebra");
  CHECK(report.warnings[2].rule == "min-histories");

  const std::string rendered = render_validation_report(report);
  CHECK(rendered.find("min-classes") != std::string::npos);
  CHECK(rendered.find("aardvark") != std::string::npos);

  const auto doc = validation_report_to_json(report);
  CHECK(doc.at("warnings").size() == 3);
  CHECK(doc.at("errors").empty());
  CHECK(doc.at("ok").get<bool>());
}

TEST_CASE("tuple enumeration covers ordered pairs times evidences times histories") {
  Dataset d;
  Category cat = compliant_category("small");
  cat.classes.resize(3);
  cat.evidences.resize(2);
  cat.histories.resize(2);
  d.categories.push_back(cat);

  const auto tuples = enumerate_tuples(d);
  CHECK(expected_tuple_count(d) == 12);  // C(3,2)=3 pairs * 2 * 2
  REQUIRE(tuples.size() == 12);

  // Order: class pairs lexicographic, then evidence, then history.
  CHECK(tuples[0] == TupleRef{0, 0, 1, 0, 0});
  CHECK(tuples[1] == TupleRef{0, 0, 1, 0, 1});
  CHECK(tuples[2] == TupleRef{0, 0, 1, 1, 0});
  CHECK(tuples[4] == TupleRef{0, 0, 2, 0, 0});
  CHECK(tuples[8] == TupleRef{0, 1, 2, 0, 0});
  for (const auto& t : tuples) CHECK(t.class_a < t.class_b);

  // The paper-shaped category: C(5,2)=10 pairs * 20 evidences * 3 histories.
  CHECK(expected_tuple_count(compliant_dataset()) == 600);

  const Dataset exemplar = load_dataset(source_dir() / "data" / "exemplar_novelists.json");
  CHECK(expected_tuple_count(exemplar) == 80);  // 10 pairs * 8 evidences * 1 history
  CHECK(enumerate_tuples(exemplar).size() == 80);
}

TEST_CASE("generation prompt embeds the category name, schema, and exemplar") {
  const Dataset exemplar = load_dataset(source_dir() / "data" / "exemplar_novelists.json");
  const std::string prompt = emit_generation_prompt("school_of_philosophy", exemplar);

  CHECK(prompt.find("\"desired class category\" = \"school_of_philosophy\"") !=
        std::string::npos);
  CHECK(prompt.find("JSON schema:") != std::string::npos);
  CHECK(prompt.find("bayesian_reasoning") != std::string::npos);
  CHECK(prompt.find(serialize_dataset(exemplar)) != std::string::npos);
  CHECK(prompt.find(" Jane Austen.") != std::string::npos);

  // Byte-stable across calls, and the name lands only in the assignment slot.
  CHECK(emit_generation_prompt("school_of_philosophy", exemplar) == prompt);
  const std::string other = emit_generation_prompt("chemical_elements", exemplar);
  CHECK(other != prompt);
  CHECK(other.find("\"desired class category\" = \"chemical_elements\"") !=
        std::string::npos);

  CHECK_THROWS_AS((void)emit_generation_prompt("", exemplar), std::invalid_argument);
}
