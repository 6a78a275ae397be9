#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "promptforge/annotator.hpp"
#include "promptforge/domain.hpp"

namespace pf_test {

using namespace promptforge;

inline const std::vector<std::string>& text_pieces() {
  static const std::vector<std::string> pieces = {
      "hello", "world", ",", "\"", "\"\"", "'", "\n", "\r\n", " ", "  ", "\t", "é", "naïve", "漢字", "😀", "שלום",
      "e\xCC\x81",  // e + combining acute
      "«", "»", "“quoted”", "a,b", "line\nbreak", "#", "\\", "{}", "[1,2]", ":", "null", "true", "\xC2\xA0"};
  return pieces;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_pieces = 8) {
  const auto& pieces = text_pieces();
  std::string out;
  const std::size_t n = 1 + rng() % max_pieces;
  for (std::size_t i = 0; i < n; ++i) out += pieces[rng() % pieces.size()];
  // must contain something visible
  if (out.find_first_not_of(" \t\r\n") == std::string::npos) out += "x";
  return out;
}

inline Dataset random_dataset(std::mt19937_64& rng, const LabelSchema& schema, std::size_t max_records = 25) {
  Dataset d;
  d.schema = schema;
  d.provenance = "fixture";
  const std::size_t n = 1 + rng() % max_records;
  std::set<std::string> ids;
  while (d.records.size() < n) {
    TextRecord r;
    r.id = (rng() % 3 == 0) ? random_text(rng, 2) : "id-" + std::to_string(rng() % 100000);
    // ids are trimmed-safe tokens: avoid leading/trailing whitespace ambiguity
    if (r.id.find_first_of(" \t\r\n\xC2") != std::string::npos) continue;
    if (!ids.insert(r.id).second) continue;
    r.text = random_text(rng);
    if (rng() % 4 != 0) r.gold = schema.labels[rng() % schema.labels.size()];
    d.records.push_back(std::move(r));
  }
  return d;
}

inline AnnotationSet random_annotations(std::mt19937_64& rng, const LabelSchema& schema) {
  AnnotationSet s;
  s.prompt_id = "p" + std::to_string(rng() % 1000);
  s.provenance = random_text(rng, 3);
  s.started_at = "2026-01-02T03:04:05Z";
  s.finished_at = "2026-01-02T03:04:09Z";
  const std::size_t n = 1 + rng() % 20;
  for (std::size_t i = 0; i < n; ++i) {
    Annotation a;
    a.record_id = "r" + std::to_string(i);
    const std::size_t attempts = rng() % 4;
    for (std::size_t k = 0; k < attempts; ++k) a.attempts.push_back(random_text(rng, 4));
    if (rng() % 3 != 0) a.label = schema.labels[rng() % schema.labels.size()];
    a.usage = {static_cast<std::int64_t>(rng() % 500), static_cast<std::int64_t>(rng() % 50)};
    if (rng() % 7 == 0) a.error = random_text(rng, 3);
    s.annotations.push_back(std::move(a));
  }
  return s;
}

}  // namespace pf_test
