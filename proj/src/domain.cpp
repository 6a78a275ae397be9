#include "promptforge/domain.hpp"

#include <algorithm>
#include <set>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "promptforge/errors.hpp"

namespace promptforge {

namespace {

using icu::UnicodeString;

UnicodeString nfkc(std::string_view s) {
  UnicodeString in = UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status)) return in;
  UnicodeString out = norm->normalize(in, status);
  if (U_FAILURE(status)) return in;
  return out;
}

std::string to_utf8(const UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

bool is_quote(UChar32 c) {
  switch (c) {
    case u'"':
    case u'\'':
    case u'`':
    case 0x201C:  // “
    case 0x201D:  // ”
    case 0x2018:  // ‘
    case 0x2019:  // ’
    case 0x201E:  // „
    case 0x00AB:  // «
    case 0x00BB:  // »
      return true;
    default:
      return false;
  }
}

bool is_trailing_punct(UChar32 c) { return c == u'.' || c == u',' || c == u'!'; }

void trim_in_place(UnicodeString& s) {
  int32_t begin = 0;
  int32_t end = s.length();
  while (begin < end && u_isUWhiteSpace(s.char32At(begin))) begin = s.moveIndex32(begin, 1);
  while (end > begin) {
    int32_t prev = s.moveIndex32(end, -1);
    if (!u_isUWhiteSpace(s.char32At(prev))) break;
    end = prev;
  }
  s = UnicodeString(s, begin, end - begin);
}

void strip_trailing_punct(UnicodeString& s) {
  while (s.length() > 0) {
    int32_t last = s.moveIndex32(s.length(), -1);
    if (!is_trailing_punct(s.char32At(last))) break;
    s.truncate(last);
    trim_in_place(s);
  }
}

void strip_one_quote_layer(UnicodeString& s) {
  if (s.countChar32() < 2) return;
  int32_t last = s.moveIndex32(s.length(), -1);
  if (is_quote(s.char32At(0)) && is_quote(s.char32At(last))) {
    int32_t first_end = s.moveIndex32(0, 1);
    s = UnicodeString(s, first_end, last - first_end);
  }
}

// Decoration-stripping part of the WholeAnswer pipeline; result is lowercased.
std::string canonical_form(std::string_view raw) {
  UnicodeString s = nfkc(raw);
  trim_in_place(s);
  strip_trailing_punct(s);
  strip_one_quote_layer(s);
  trim_in_place(s);
  strip_trailing_punct(s);
  s.toLower();
  return to_utf8(s);
}

Label match(std::string_view raw, const LabelSchema& schema) {
  const std::string form = canonical_form(raw);
  if (form.empty()) return std::nullopt;
  for (const auto& label : schema.labels) {
    if (text::fold(label) == form) return label;
  }
  for (const auto& [alias, target] : schema.aliases) {
    if (text::fold(alias) == form && schema.contains(target)) return target;
  }
  return std::nullopt;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

}  // namespace

bool LabelSchema::contains(std::string_view label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

bool Dataset::fully_labelled() const {
  return std::all_of(records.begin(), records.end(), [](const TextRecord& r) { return r.gold.has_value(); });
}

std::size_t Dataset::labelled_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const TextRecord& r) { return r.gold.has_value(); }));
}

std::string_view to_string(ExtractionMode mode) {
  return mode == ExtractionMode::WholeAnswer ? "whole-answer" : "last-word";
}

ExtractionMode parse_extraction_mode(std::string_view value) {
  const std::string v = text::ascii_lower(text::trim(value));
  if (v == "whole" || v == "whole-answer" || v == "wholeanswer") return ExtractionMode::WholeAnswer;
  if (v == "last-word" || v == "lastword" || v == "last") return ExtractionMode::LastWord;
  throw InvalidArgument("unknown extraction mode '" + std::string(value) + "' (expected whole-answer or last-word)");
}

std::string_view to_string(PromptOrigin origin) {
  switch (origin) {
    case PromptOrigin::Seed:
      return "seed";
    case PromptOrigin::Mutation:
      return "mutation";
    case PromptOrigin::FallbackCopy:
      return "fallback-copy";
  }
  return "seed";
}

PromptOrigin parse_prompt_origin(std::string_view value) {
  if (value == "seed") return PromptOrigin::Seed;
  if (value == "mutation") return PromptOrigin::Mutation;
  if (value == "fallback-copy") return PromptOrigin::FallbackCopy;
  throw InvalidArgument("unknown prompt origin '" + std::string(value) + "'");
}

Label normalize_label(std::string_view raw, const LabelSchema& schema, ExtractionMode mode) {
  if (mode == ExtractionMode::WholeAnswer) return match(raw, schema);

  // Compatibility normalization first so full-width spaces split tokens.
  const std::string normalized = to_utf8(nfkc(raw));
  std::string last_line;
  for (const auto& line : text::split(normalized, '\n')) {
    std::string t = text::trim(line);
    if (!t.empty()) last_line = std::move(t);
  }
  if (last_line.empty()) return std::nullopt;

  std::vector<std::string> tokens;
  std::string current;
  for (char c : last_line) {
    if (is_space(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));

  for (std::size_t k = tokens.size(); k >= 1; --k) {
    std::vector<std::string> suffix(tokens.end() - static_cast<std::ptrdiff_t>(k), tokens.end());
    if (Label label = match(text::join(suffix, " "), schema)) return label;
  }
  return std::nullopt;
}

std::vector<std::string> validate_schema(const LabelSchema& schema) {
  std::vector<std::string> violations;
  if (schema.labels.size() < 2) violations.push_back("fewer than 2 labels");

  std::set<std::string> seen;
  for (const auto& label : schema.labels) {
    if (label.empty()) {
      violations.push_back("empty label");
      continue;
    }
    if (text::trim(label) != label) violations.push_back("label '" + label + "' has surrounding whitespace");
    if (text::fold(label) != label) violations.push_back("label '" + label + "' is not lowercase");
    if (!seen.insert(label).second) violations.push_back("duplicate label '" + label + "'");
  }

  for (const auto& [alias, target] : schema.aliases) {
    if (text::trim(alias).empty()) violations.push_back("empty alias");
    if (schema.contains(text::fold(alias)) || schema.contains(alias)) {
      violations.push_back("alias '" + alias + "' collides with a canonical label");
    }
    if (!schema.contains(target)) {
      violations.push_back("alias '" + alias + "' targets unknown label '" + target + "'");
    }
  }
  return violations;
}

void require_valid_schema(const LabelSchema& schema) {
  auto violations = validate_schema(schema);
  if (!violations.empty()) throw InvalidArgument("invalid label schema: " + text::join(violations, "; "));
}

std::string format_directive(const LabelSchema& schema) {
  std::string out = "Output only ";
  for (std::size_t i = 0; i < schema.labels.size(); ++i) {
    if (i > 0) out += (i + 1 == schema.labels.size()) ? " or " : ", ";
    out += '"' + schema.labels[i] + '"';
  }
  out += " without quotes.";
  return out;
}

std::optional<std::string> find_format_directive(std::string_view instruction) {
  const auto start = instruction.find("Output only");
  if (start == std::string_view::npos) return std::nullopt;
  std::size_t end = instruction.size();
  for (std::size_t i = start; i < instruction.size(); ++i) {
    if (instruction[i] == '.' && (i + 1 == instruction.size() || is_space(instruction[i + 1]))) {
      end = i + 1;
      break;
    }
  }
  std::string directive = text::trim(instruction.substr(start, end - start));
  if (directive.empty()) return std::nullopt;
  return directive;
}

namespace text {

std::string trim(std::string_view s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && is_space(s[begin])) ++begin;
  while (end > begin && is_space(s[end - 1])) --end;
  return std::string(s.substr(begin, end - begin));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      parts.emplace_back(s.substr(pos));
      break;
    }
    parts.emplace_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c); });
  return out;
}

std::string fold(std::string_view s) {
  UnicodeString u = nfkc(s);
  u.toLower();
  return to_utf8(u);
}

}  // namespace text

}  // namespace promptforge
