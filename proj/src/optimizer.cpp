#include "promptforge/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_set>

#include "promptforge/errors.hpp"
#include "promptforge/random.hpp"

namespace promptforge {

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

// Rewrites often come back wrapped in quotes; drop one surrounding layer.
std::string clean_rewrite(std::string_view raw) {
  std::string s = text::trim(raw);
  static constexpr std::pair<std::string_view, std::string_view> kPairs[] = {
      {"\"", "\""}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"'", "'"}};
  for (const auto& [open, close] : kPairs) {
    if (s.size() >= open.size() + close.size() && starts_with(s, open) && ends_with(s, close)) {
      s = text::trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size()));
      break;
    }
  }
  return s;
}

std::string memo_key(const PromptSpec& p) { return std::string(to_string(p.extraction)) + '\x1f' + p.instruction; }

Dataset subset_of(const Dataset& source, const std::unordered_set<std::string>& ids, bool inside) {
  Dataset out;
  out.schema = source.schema;
  out.provenance = source.provenance;
  for (const auto& r : source.records) {
    if (!r.gold) continue;
    if ((ids.count(r.id) > 0) == inside) out.records.push_back(r);
  }
  return out;
}

}  // namespace

void validate(const OptimizerConfig& c) {
  if (c.elites < 1) throw InvalidArgument("elites must be >= 1");
  if (c.mutations_per_elite < 1) throw InvalidArgument("mutations_per_elite must be >= 1");
  if (c.generations < 1) throw InvalidArgument("generations must be >= 1");
  if (c.fitness_subset_size < 1) throw InvalidArgument("fitness_subset_size must be >= 1");
  if (c.elites + c.elites * c.mutations_per_elite != c.population) {
    throw InvalidArgument("population must equal elites + elites * mutations_per_elite (" +
                          std::to_string(c.elites) + " + " + std::to_string(c.elites) + "*" +
                          std::to_string(c.mutations_per_elite) + " != " + std::to_string(c.population) + ")");
  }
  if (!std::isfinite(c.mutation_temperature) || c.mutation_temperature < 0.0 || c.mutation_temperature > 2.0) {
    throw InvalidArgument("mutation_temperature must be within [0, 2]");
  }
  if (text::trim(c.meta_prompt).empty()) throw InvalidArgument("meta_prompt is empty");
  if (c.mutation_max_output_tokens < 1) throw InvalidArgument("mutation_max_output_tokens must be >= 1");
}

std::vector<std::string> sample_fitness_subset(const Dataset& labelled, int size, std::uint64_t seed) {
  if (size < 1) throw InvalidArgument("fitness subset size must be >= 1");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labelled.records.size(); ++i) {
    if (labelled.records[i].gold) candidates.push_back(i);
  }
  const auto wanted = static_cast<std::size_t>(size);
  if (candidates.size() < wanted) {
    throw TooFewLabelled("fitness subset of " + std::to_string(size) + " requested but only " +
                         std::to_string(candidates.size()) + " gold-labelled records are available");
  }
  // Partial Fisher-Yates: the first `wanted` slots become the sample.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < wanted; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(wanted);
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::string> ids;
  ids.reserve(wanted);
  for (std::size_t i : candidates) ids.push_back(labelled.records[i].id);
  return ids;
}

std::string PromptIdSource::next() {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", ++counter_);
  return prefix_ + buf;
}

std::vector<PromptSpec> mutate(const PromptSpec& prompt, int k, std::string_view meta_prompt, ChatProvider& provider,
                               const MutationOptions& options, PromptIdSource& ids, std::size_t* calls_made) {
  if (k < 1) throw InvalidArgument("mutate needs k >= 1");
  std::vector<PromptSpec> children;
  children.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    ChatRequest request;
    request.model = options.model;
    request.temperature = options.temperature;
    request.max_output_tokens = options.max_output_tokens;
    request.messages.push_back({Role::User, std::string(meta_prompt) + "\n\n" + prompt.instruction});

    std::string rewrite;
    for (int retry = 0; retry < 2 && rewrite.empty(); ++retry) {
      request.variant = options.variant_base + static_cast<std::uint32_t>(2 * j + retry);
      rewrite = clean_rewrite(provider.complete(request).content);
      if (calls_made) ++*calls_made;
    }

    PromptSpec child;
    child.id = ids.next();
    child.extraction = prompt.extraction;
    child.parent_id = prompt.id;
    child.generation = prompt.generation + 1;
    if (rewrite.empty()) {
      child.instruction = prompt.instruction;
      child.origin = PromptOrigin::FallbackCopy;
    } else {
      child.instruction = std::move(rewrite);
      child.origin = PromptOrigin::Mutation;
      if (options.format_directive && child.instruction.find(*options.format_directive) == std::string::npos) {
        child.instruction += ' ' + *options.format_directive;
      }
    }
    children.push_back(std::move(child));
  }
  return children;
}

bool elite_before(const ScoredPrompt& a, const ScoredPrompt& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.eval_errors != b.eval_errors) return a.eval_errors < b.eval_errors;
  if (a.prompt.instruction.size() != b.prompt.instruction.size()) {
    return a.prompt.instruction.size() < b.prompt.instruction.size();
  }
  return a.prompt.id < b.prompt.id;
}

std::vector<ScoredPrompt> select_elites(const std::vector<ScoredPrompt>& scored, int count) {
  if (count < 0 || static_cast<std::size_t>(count) > scored.size()) {
    throw InvalidArgument("cannot select " + std::to_string(count) + " elites from " + std::to_string(scored.size()) +
                          " prompts");
  }
  std::vector<ScoredPrompt> ordered = scored;
  std::sort(ordered.begin(), ordered.end(), elite_before);
  ordered.resize(static_cast<std::size_t>(count));
  return ordered;
}

OptRun run_apo(const OptimizerConfig& config, const Dataset& labelled, const PromptSpec& seed_prompt,
               const AnnotationPolicy& policy, ChatProvider& provider, const RunObserver& observer,
               std::stop_token stop) {
  validate(config);
  validate(policy);
  if (text::trim(seed_prompt.instruction).empty()) throw InvalidArgument("seed prompt instruction is empty");
  const std::size_t gold_count = labelled.labelled_count();
  if (gold_count <= static_cast<std::size_t>(config.fitness_subset_size)) {
    throw TooFewLabelled("optimization needs more than " + std::to_string(config.fitness_subset_size) +
                         " gold-labelled records so a held-out remainder exists; found " +
                         std::to_string(gold_count));
  }

  OptRun run;
  run.config = config;
  run.seed = seed_prompt;
  run.seed.parent_id.reset();
  run.seed.origin = PromptOrigin::Seed;
  if (run.seed.id.empty()) run.seed.id = "p000";
  run.run_id = config.run_id;
  if (run.run_id.empty()) {
    const std::string fingerprint = run.seed.instruction + '\n' + labelled.provenance + '\n' +
                                    std::to_string(config.rng_seed) + '\n' + std::to_string(gold_count);
    run.run_id = "run-" + cache_key("optimizer-run", {{Role::User, fingerprint}}, 0.0).substr(0, 12);
  }
  run.config.run_id = run.run_id;

  run.fitness_subset_ids = sample_fitness_subset(labelled, config.fitness_subset_size, config.rng_seed);
  const std::unordered_set<std::string> subset_ids(run.fitness_subset_ids.begin(), run.fitness_subset_ids.end());
  const Dataset fitness = subset_of(labelled, subset_ids, true);
  const Dataset held_out = subset_of(labelled, subset_ids, false);
  if (held_out.records.size() < 100) {
    run.warnings.push_back("held-out remainder has only " + std::to_string(held_out.records.size()) +
                           " records; the final estimate will be wide");
  }

  MutationOptions mutation;
  mutation.model = config.mutation_model;
  mutation.temperature = config.mutation_temperature;
  mutation.max_output_tokens = config.mutation_max_output_tokens;
  if (config.preserve_format_directive) {
    mutation.format_directive = config.format_directive ? config.format_directive
                                                        : find_format_directive(run.seed.instruction);
  }
  PromptIdSource ids;

  const auto P = static_cast<std::size_t>(config.population);
  const auto E = static_cast<std::size_t>(config.elites);
  const std::size_t total_evals = P + static_cast<std::size_t>(config.generations) * (P - E) + 1;
  std::size_t evals_done = 0;
  auto tick = [&] {
    ++evals_done;
    if (observer.on_progress) observer.on_progress(evals_done, total_evals);
  };
  auto check_stop = [&] {
    if (stop.stop_requested()) throw Cancelled();
  };

  if (observer.on_start) observer.on_start(run);

  std::map<std::string, std::pair<double, std::int64_t>> memo;
  auto score_prompt = [&](const PromptSpec& prompt) {
    check_stop();
    ScoredPrompt scored{prompt, 0.0, 0};
    const std::string key = memo_key(prompt);
    if (auto it = memo.find(key); it != memo.end()) {
      std::tie(scored.score, scored.eval_errors) = it->second;
    } else {
      AnnotationSet annotations = label_dataset(prompt, fitness, fitness.schema, policy, provider, {}, stop);
      const EvalReport report = score(annotations, fitness);
      scored.score = report.micro_f1;
      scored.eval_errors = report.unparsed_count;
      memo.emplace(key, std::make_pair(scored.score, scored.eval_errors));
    }
    tick();
    return scored;
  };

  auto finish_generation = [&](std::vector<ScoredPrompt> population, const std::vector<LineageEdge>& edges) {
    std::sort(population.begin(), population.end(), elite_before);
    run.generations.push_back(std::move(population));
    if (observer.on_generation) {
      observer.on_generation(static_cast<int>(run.generations.size() - 1), run.generations.back(), edges);
    }
  };

  // Initial population: the seed plus P-1 rewrites of it.
  {
    std::vector<PromptSpec> members{run.seed};
    check_stop();
    for (auto& child : mutate(run.seed, config.population - 1, config.meta_prompt, provider, mutation, ids,
                              &run.mutation_calls)) {
      members.push_back(std::move(child));
    }
    std::vector<LineageEdge> edges;
    std::vector<ScoredPrompt> population;
    for (const auto& member : members) {
      if (member.parent_id) edges.push_back({*member.parent_id, member.id});
      population.push_back(score_prompt(member));
    }
    run.lineage.insert(run.lineage.end(), edges.begin(), edges.end());
    finish_generation(std::move(population), edges);
  }

  for (int t = 1; t <= config.generations; ++t) {
    std::vector<ScoredPrompt> population = select_elites(run.generations.back(), config.elites);
    std::vector<LineageEdge> edges;
    for (std::size_t e = 0; e < E; ++e) {
      check_stop();
      mutation.variant_base = static_cast<std::uint32_t>(t) * 4096u + static_cast<std::uint32_t>(e) * 256u;
      const PromptSpec parent = population[e].prompt;
      for (auto& child : mutate(parent, config.mutations_per_elite, config.meta_prompt, provider, mutation, ids,
                                &run.mutation_calls)) {
        edges.push_back({parent.id, child.id});
        population.push_back(score_prompt(child));
      }
    }
    run.lineage.insert(run.lineage.end(), edges.begin(), edges.end());
    finish_generation(std::move(population), edges);
  }

  if (config.best == BestSelection::LastGeneration) {
    run.best = run.generations.back().front();
  } else {
    run.best = run.generations.front().front();
    for (const auto& generation : run.generations) {
      if (elite_before(generation.front(), run.best)) run.best = generation.front();
    }
  }

  check_stop();
  AnnotationSet final_annotations =
      label_dataset(run.best.prompt, held_out, held_out.schema, policy, provider, {}, stop);
  run.final_report = score(final_annotations, held_out);
  tick();

  if (observer.on_finish) observer.on_finish(run);
  return run;
}

}  // namespace promptforge
