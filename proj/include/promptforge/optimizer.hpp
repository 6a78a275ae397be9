#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "promptforge/annotator.hpp"
#include "promptforge/domain.hpp"
#include "promptforge/metrics.hpp"
#include "promptforge/providers.hpp"

namespace promptforge {

inline constexpr std::string_view kDefaultMetaPrompt =
    "Generate a variation of the following instruction while keeping the semantic meaning.";

enum class BestSelection { LastGeneration, Overall };

struct OptimizerConfig {
  int population = 8;
  int elites = 2;
  int mutations_per_elite = 3;
  int generations = 15;
  int fitness_subset_size = 400;
  std::string meta_prompt{kDefaultMetaPrompt};
  double mutation_temperature = 1.0;
  std::uint64_t rng_seed = 0;
  std::string mutation_model = "gpt-3.5-turbo";
  int mutation_max_output_tokens = 512;
  // Re-append the output-format directive to rewrites that dropped it.
  bool preserve_format_directive = true;
  // Directive to preserve; when unset, the seed's "Output only ..." sentence.
  std::optional<std::string> format_directive;
  BestSelection best = BestSelection::LastGeneration;
  // Derived from the seed and inputs when empty.
  std::string run_id;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Structural checks; throws InvalidArgument before any provider call.
void validate(const OptimizerConfig& config);

struct ScoredPrompt {
  PromptSpec prompt;
  double score = 0.0;
  std::int64_t eval_errors = 0;

  friend bool operator==(const ScoredPrompt&, const ScoredPrompt&) = default;
};

struct LineageEdge {
  std::string parent_id;
  std::string child_id;

  friend bool operator==(const LineageEdge&, const LineageEdge&) = default;
};

struct OptRun {
  std::string run_id;
  OptimizerConfig config;
  PromptSpec seed;
  std::vector<std::string> fitness_subset_ids;
  // generations[t] sorted by the elite order; t = 0 is the initial population.
  std::vector<std::vector<ScoredPrompt>> generations;
  std::vector<LineageEdge> lineage;
  ScoredPrompt best;
  EvalReport final_report;
  std::size_t mutation_calls = 0;
  std::vector<std::string> warnings;
};

/// Uniform sample without replacement of `size` gold-labelled record ids,
/// returned in dataset order. Deterministic in `seed`.
std::vector<std::string> sample_fitness_subset(const Dataset& labelled, int size, std::uint64_t seed);

/// Allocates run-unique prompt ids.
class PromptIdSource {
 public:
  explicit PromptIdSource(std::string prefix = "p") : prefix_(std::move(prefix)) {}
  std::string next();

 private:
  std::string prefix_;
  std::size_t counter_ = 0;
};

struct MutationOptions {
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  int max_output_tokens = 512;
  std::optional<std::string> format_directive;
  // Offset for request variants so repeated mutation of the same parent in a
  // later generation is a distinct request.
  std::uint32_t variant_base = 0;
};

/// Issues `k` independent rewrite requests for `prompt`. Empty rewrites are
/// retried once, then the parent text is copied with origin FallbackCopy.
std::vector<PromptSpec> mutate(const PromptSpec& prompt, int k, std::string_view meta_prompt, ChatProvider& provider,
                               const MutationOptions& options, PromptIdSource& ids,
                               std::size_t* calls_made = nullptr);

/// Strict total order used for selection: score desc, eval_errors asc,
/// instruction length asc, id asc.
bool elite_before(const ScoredPrompt& a, const ScoredPrompt& b);

std::vector<ScoredPrompt> select_elites(const std::vector<ScoredPrompt>& scored, int count);

struct RunObserver {
  std::function<void(const OptRun&)> on_start;
  std::function<void(int generation, const std::vector<ScoredPrompt>& scored, const std::vector<LineageEdge>& edges)>
      on_generation;
  std::function<void(const OptRun&)> on_finish;
  // (prompt evaluations done, total), including the final held-out evaluation.
  std::function<void(std::size_t, std::size_t)> on_progress;
};

/// Evolutionary prompt optimization: score, keep elites, rewrite, repeat for
/// `generations` rounds on a fixed fitness subset, then evaluate the best
/// prompt on the held-out remainder.
OptRun run_apo(const OptimizerConfig& config, const Dataset& labelled, const PromptSpec& seed_prompt,
               const AnnotationPolicy& policy, ChatProvider& provider, const RunObserver& observer = {},
               std::stop_token stop = {});

}  // namespace promptforge
