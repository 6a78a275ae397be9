#pragma once

// Scripted keyword landscape for optimizer tests.
//
// Every record is tied to one keyword. Labelling answers a record correctly
// iff its keyword occurs in the instruction, so fitness is the share of
// subset records whose keyword is present. Mutation adds a missing keyword,
// drops one, or rewrites without changing the keyword set, chosen by a hash
// of (landscape seed, instruction, variant).

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "promptforge/annotator.hpp"
#include "promptforge/optimizer.hpp"
#include "promptforge/random.hpp"

namespace pf_test {

using namespace promptforge;

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

inline const std::string kDirective = "Output only \"yes\" or \"no\" without quotes.";

struct Landscape {
  std::uint64_t seed = 1;
  std::vector<std::string> keywords;
  Dataset data;
  std::map<std::string, std::size_t> keyword_of;  // record text -> keyword index
  int add_pct = 50;
  int drop_pct = 20;
  int empty_pct = 0;    // share of rewrites that come back empty
  int garble_pct = 0;   // share of label answers that do not parse

  std::string seed_instruction() const { return "Decide whether the sample fits. " + kDirective; }

  std::set<std::size_t> keywords_in(std::string_view instruction) const {
    std::set<std::size_t> found;
    for (std::size_t k = 0; k < keywords.size(); ++k) {
      if (instruction.find(keywords[k]) != std::string_view::npos) found.insert(k);
    }
    return found;
  }

  std::string render(const std::set<std::size_t>& set) const {
    std::string out = "Decide whether the sample fits";
    if (!set.empty()) {
      out += " weighing";
      for (std::size_t k : set) out += " " + keywords[k];
    }
    return out + ".";
  }

  /// Score of a keyword set over the given records, counted directly.
  double oracle_score(const std::set<std::size_t>& set, const std::vector<std::string>& record_ids) const {
    std::size_t hit = 0;
    for (const auto& id : record_ids) {
      const auto& rec = *std::find_if(data.records.begin(), data.records.end(),
                                      [&](const TextRecord& r) { return r.id == id; });
      if (set.count(keyword_of.at(rec.text))) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(record_ids.size());
  }

  std::optional<std::string> reply(const ChatRequest& req, std::string_view meta_prompt) const {
    const std::string content(last_user_content(req));
    if (content.rfind(meta_prompt, 0) == 0) {
      const std::string instruction = content.substr(meta_prompt.size() + 2);
      const std::uint64_t h = mix(fnv1a(instruction, seed) ^ (static_cast<std::uint64_t>(req.variant) << 20));
      const int roll = static_cast<int>(h % 100);
      if (roll < empty_pct) return std::string("   ");
      auto set = keywords_in(instruction);
      std::vector<std::size_t> missing;
      for (std::size_t k = 0; k < keywords.size(); ++k) {
        if (!set.count(k)) missing.push_back(k);
      }
      const int r2 = static_cast<int>((h >> 8) % 100);
      if (r2 < add_pct && !missing.empty()) {
        set.insert(missing[(h >> 16) % missing.size()]);
      } else if (r2 < add_pct + drop_pct && !set.empty()) {
        auto it = set.begin();
        std::advance(it, static_cast<long>((h >> 16) % set.size()));
        set.erase(it);
      }
      return render(set);
    }
    const auto split = content.rfind("\n\n");
    if (split == std::string::npos) return std::nullopt;
    const std::string instruction = content.substr(0, split);
    const std::string text = content.substr(split + 2);
    auto it = keyword_of.find(text);
    if (it == keyword_of.end()) return std::nullopt;
    const auto& rec = *std::find_if(data.records.begin(), data.records.end(),
                                    [&](const TextRecord& r) { return r.text == text; });
    if (garble_pct > 0 && static_cast<int>(mix(fnv1a(content, seed ^ req.variant)) % 100) < garble_pct) {
      return std::string("not sure");
    }
    const bool present = instruction.find(keywords[it->second]) != std::string::npos;
    const std::string& gold = *rec.gold;
    return present ? gold : std::string(gold == "yes" ? "no" : "yes");
  }

  std::shared_ptr<ScriptedProvider> provider(std::string meta_prompt = std::string(kDefaultMetaPrompt)) const {
    auto self = std::make_shared<Landscape>(*this);
    return std::make_shared<ScriptedProvider>(
        [self, meta_prompt](const ChatRequest& req) { return self->reply(req, meta_prompt); });
  }
};

inline Landscape make_landscape(std::size_t n_records, std::size_t n_keywords, std::uint64_t seed) {
  Landscape l;
  l.seed = seed;
  static const char* kNames[] = {"kw-amber", "kw-basalt", "kw-cobalt", "kw-dune",  "kw-ember",
                                 "kw-fjord", "kw-garnet", "kw-harbor", "kw-indigo", "kw-jasper"};
  for (std::size_t k = 0; k < n_keywords; ++k) l.keywords.push_back(kNames[k]);
  l.data.schema.task_name = "landscape";
  l.data.schema.labels = {"yes", "no"};
  l.data.provenance = "landscape-" + std::to_string(seed);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_records; ++i) {
    TextRecord r;
    r.id = "r" + std::to_string(i + 1);
    r.text = "sample number " + std::to_string(i + 1);
    r.gold = uniform_index(rng, 2) == 0 ? "yes" : "no";
    l.keyword_of[r.text] = static_cast<std::size_t>(uniform_index(rng, n_keywords));
    l.data.records.push_back(std::move(r));
  }
  return l;
}

inline PromptSpec seed_prompt(const Landscape& l) {
  PromptSpec p;
  p.instruction = l.seed_instruction();
  return p;
}

/// Breadth-first search over keyword sets under the scripted mutation moves
/// (add one, drop one, keep). Returns the best score reachable within
/// `max_depth` rewrites of the seed and the fewest rewrites needed to reach it.
inline std::pair<double, int> reachable_optimum(const Landscape& l, const std::vector<std::string>& subset,
                                                int max_depth) {
  std::set<std::size_t> start = l.keywords_in(l.seed_instruction());
  std::map<std::set<std::size_t>, int> depth{{start, 0}};
  std::vector<std::set<std::size_t>> frontier{start};
  for (int d = 1; d <= max_depth && !frontier.empty(); ++d) {
    std::vector<std::set<std::size_t>> next;
    for (const auto& s : frontier) {
      for (std::size_t k = 0; k < l.keywords.size(); ++k) {
        auto t = s;
        if (t.count(k)) {
          t.erase(k);
        } else {
          t.insert(k);
        }
        if (depth.emplace(t, d).second) next.push_back(t);
      }
    }
    frontier = std::move(next);
  }
  double best = -1.0;
  int best_depth = 0;
  for (const auto& [set, d] : depth) {
    const double s = l.oracle_score(set, subset);
    if (s > best + 1e-12 || (std::abs(s - best) <= 1e-12 && d < best_depth)) {
      best = s;
      best_depth = d;
    }
  }
  return {best, best_depth};
}

}  // namespace pf_test
