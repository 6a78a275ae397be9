#include <random>

#include "doctest.h"
#include "promptforge/domain.hpp"
#include "promptforge/errors.hpp"

using namespace promptforge;

namespace {

LabelSchema pol() { return {"pol", {"liberal", "conservative"}, {}}; }
LabelSchema hate() { return {"hate", {"hateful", "non-hateful"}, {}}; }

bool has(const std::vector<std::string>& v, std::string_view needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("normalize_label whole answer") {
  CHECK(normalize_label("conservative", pol(), ExtractionMode::WholeAnswer) == "conservative");
  CHECK(normalize_label("“Conservative.”", pol(), ExtractionMode::WholeAnswer) == "conservative");
  CHECK(normalize_label("  LIBERAL!  ", pol(), ExtractionMode::WholeAnswer) == "liberal");
  CHECK(normalize_label("\"liberal\"", pol(), ExtractionMode::WholeAnswer) == "liberal");
  CHECK(normalize_label("'liberal.'", pol(), ExtractionMode::WholeAnswer) == "liberal");
  CHECK_FALSE(normalize_label("right-wing", pol(), ExtractionMode::WholeAnswer));
  CHECK_FALSE(normalize_label("", pol(), ExtractionMode::WholeAnswer));
  CHECK_FALSE(normalize_label("The message is conservative", pol(), ExtractionMode::WholeAnswer));
}

TEST_CASE("normalize_label full-width and compatibility forms") {
  // Full-width letters and punctuation fold under NFKC.
  CHECK(normalize_label("ＬＩＢＥＲＡＬ．", pol(), ExtractionMode::WholeAnswer) ==
        "liberal");
  CHECK(normalize_label("«conservative»", pol(), ExtractionMode::WholeAnswer) == "conservative");
}

TEST_CASE("normalize_label aliases are opt-in") {
  LabelSchema s = pol();
  CHECK_FALSE(normalize_label("right-wing", s, ExtractionMode::WholeAnswer));
  s.aliases["right-wing"] = "conservative";
  CHECK(normalize_label("Right-wing.", s, ExtractionMode::WholeAnswer) == "conservative");
}

TEST_CASE("normalize_label last word") {
  CHECK(normalize_label("I reason as follows... \nhateful", hate(), ExtractionMode::LastWord) == "hateful");
  CHECK(normalize_label("Reasoning here.\nnon-hateful\n\n", hate(), ExtractionMode::LastWord) == "non-hateful");
  CHECK(normalize_label("It targets a group. So: Hateful.", hate(), ExtractionMode::LastWord) == "hateful");
  CHECK_FALSE(normalize_label("no verdict\nmaybe", hate(), ExtractionMode::LastWord));

  LabelSchema multi{"t", {"very positive", "positive", "negative"}, {}};
  CHECK(normalize_label("thinking...\nthe answer is very positive", multi, ExtractionMode::LastWord) ==
        "very positive");
  CHECK(normalize_label("thinking...\npositive", multi, ExtractionMode::LastWord) == "positive");
}

TEST_CASE("normalize_label properties over decorations") {
  const std::vector<LabelSchema> schemas = {pol(), hate(), {"e", {"joy", "anger", "sadness", "optimism"}, {}}};
  const std::vector<std::pair<std::string, std::string>> wraps = {
      {"", ""}, {"\"", "\""}, {"“", "”"}, {"'", "'"}, {"  ", "\t\n"}};
  const std::vector<std::string> tails = {"", ".", "!", "..."};
  for (const auto& s : schemas) {
    for (const auto& label : s.labels) {
      // idempotent and closed
      for (auto mode : {ExtractionMode::WholeAnswer, ExtractionMode::LastWord}) {
        const auto once = normalize_label(label, s, mode);
        REQUIRE(once);
        CHECK(*once == label);
        CHECK(normalize_label(*once, s, mode) == once);
      }
      for (const auto& [open, close] : wraps) {
        for (const auto& tail : tails) {
          for (int upper = 0; upper < 2; ++upper) {
            std::string body = label;
            if (upper) {
              for (auto& c : body) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            }
            const std::string decorated = open + body + tail + close;
            CHECK_MESSAGE(normalize_label(decorated, s, ExtractionMode::WholeAnswer) == label, decorated);
          }
        }
      }
    }
  }
}

TEST_CASE("normalize_label never leaves the schema") {
  std::mt19937_64 rng(7);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz -.!\"'\n";
  const LabelSchema s = hate();
  for (int i = 0; i < 2000; ++i) {
    std::string raw;
    const std::size_t len = rng() % 20;
    for (std::size_t j = 0; j < len; ++j) raw += alphabet[rng() % alphabet.size()];
    if (rng() % 4 == 0) raw += s.labels[rng() % 2];
    for (auto mode : {ExtractionMode::WholeAnswer, ExtractionMode::LastWord}) {
      const auto got = normalize_label(raw, s, mode);
      if (got) CHECK(s.contains(*got));
    }
    // single token: last-word equals whole-answer
    if (raw.find_first_of(" \t\n") == std::string::npos) {
      CHECK(normalize_label(raw, s, ExtractionMode::LastWord) == normalize_label(raw, s, ExtractionMode::WholeAnswer));
    }
  }
}

TEST_CASE("validate_schema") {
  CHECK(validate_schema(hate()).empty());
  CHECK(has(validate_schema({"t", {"hateful", "hateful"}, {}}), "duplicate label"));
  CHECK(has(validate_schema({"t", {"a"}, {}}), "fewer than 2 labels"));
  CHECK(has(validate_schema({"t", {"a", ""}, {}}), "empty label"));
  CHECK(has(validate_schema({"t", {"a", " b"}, {}}), "whitespace"));
  CHECK(has(validate_schema({"t", {"a", "B"}, {}}), "not lowercase"));
  CHECK(has(validate_schema({"t", {"a", "b"}, {{"a", "b"}}}), "collides"));
  CHECK(has(validate_schema({"t", {"a", "b"}, {{"x", "c"}}}), "unknown label"));
  CHECK_THROWS_AS(require_valid_schema({"t", {"a"}, {}}), InvalidArgument);
}

TEST_CASE("format directive") {
  CHECK(format_directive(pol()) == "Output only \"liberal\" or \"conservative\" without quotes.");
  CHECK(format_directive({"e", {"joy", "anger", "sadness"}, {}}) ==
        "Output only \"joy\", \"anger\" or \"sadness\" without quotes.");
  const auto found = find_format_directive(
      "Classify the message. Output only “hateful” or “non-hateful” without quotes.");
  REQUIRE(found);
  CHECK(*found == "Output only “hateful” or “non-hateful” without quotes.");
  CHECK_FALSE(find_format_directive("Identify the text as either liberal or conservative."));
}

TEST_CASE("enum round trips") {
  for (auto m : {ExtractionMode::WholeAnswer, ExtractionMode::LastWord}) CHECK(parse_extraction_mode(to_string(m)) == m);
  CHECK(parse_extraction_mode("LastWord") == ExtractionMode::LastWord);
  CHECK_THROWS_AS(parse_extraction_mode("first-word"), InvalidArgument);
  for (auto o : {PromptOrigin::Seed, PromptOrigin::Mutation, PromptOrigin::FallbackCopy}) {
    CHECK(parse_prompt_origin(to_string(o)) == o);
  }
}

TEST_CASE("dataset helpers") {
  Dataset d;
  d.schema = hate();
  d.records = {{"1", "a", "hateful"}, {"2", "b", std::nullopt}};
  CHECK_FALSE(d.fully_labelled());
  CHECK(d.labelled_count() == 1);
  d.records[1].gold = "non-hateful";
  CHECK(d.fully_labelled());
}
