#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

/// A parsed label: a canonical schema label, or std::nullopt for Unparsed.
using Label = std::optional<std::string>;

/// Closed output vocabulary of a classification task.
struct LabelSchema {
  std::string task_name;
  std::vector<std::string> labels;
  std::map<std::string, std::string> aliases;  // alias -> canonical

  bool contains(std::string_view label) const;

  friend bool operator==(const LabelSchema&, const LabelSchema&) = default;
};

struct TextRecord {
  std::string id;
  std::string text;
  Label gold;

  friend bool operator==(const TextRecord&, const TextRecord&) = default;
};

struct Dataset {
  LabelSchema schema;
  std::vector<TextRecord> records;
  std::string provenance;

  bool fully_labelled() const;
  std::size_t labelled_count() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class ExtractionMode { WholeAnswer, LastWord };

std::string_view to_string(ExtractionMode mode);
/// Accepts "whole", "whole-answer", "last-word", "lastword" (case-insensitive).
ExtractionMode parse_extraction_mode(std::string_view text);

/// How a prompt entered the run.
enum class PromptOrigin { Seed, Mutation, FallbackCopy };

std::string_view to_string(PromptOrigin origin);
PromptOrigin parse_prompt_origin(std::string_view text);

/// The unit the optimizer evolves.
struct PromptSpec {
  std::string id;
  std::string instruction;
  ExtractionMode extraction = ExtractionMode::WholeAnswer;
  std::optional<std::string> parent_id;
  int generation = 0;
  PromptOrigin origin = PromptOrigin::Seed;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// Maps a raw model answer onto a schema label.
///
/// WholeAnswer: compatibility-normalize, trim, strip trailing `.,!`, strip one
/// layer of surrounding quotes, lowercase, then match labels and aliases.
/// LastWord: take the last nonempty line, try its longest whitespace-token
/// suffix first and fall back to the single last token, each through the
/// WholeAnswer pipeline.
Label normalize_label(std::string_view raw, const LabelSchema& schema, ExtractionMode mode);

/// Every invariant violation of the schema; empty means valid.
std::vector<std::string> validate_schema(const LabelSchema& schema);

/// Throws InvalidArgument listing violations when the schema is invalid.
void require_valid_schema(const LabelSchema& schema);

/// `Output only "a" or "b" without quotes.` for the schema's labels.
std::string format_directive(const LabelSchema& schema);

/// The first `Output only ...` sentence of an instruction, if any.
std::optional<std::string> find_format_directive(std::string_view instruction);

namespace text {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string ascii_lower(std::string_view s);

/// NFKC normalization followed by full Unicode lowercasing.
std::string fold(std::string_view s);

}  // namespace text

}  // namespace promptforge
