#include "promptforge/json_io.hpp"

#include "promptforge/errors.hpp"

namespace promptforge {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_optional_string(const json& j, const char* key) {
  if (auto it = j.find(key); it != j.end() && it->is_string()) return it->get<std::string>();
  return std::nullopt;
}

}  // namespace

void to_json(json& j, const LabelSchema& schema) {
  j = json{{"task_name", schema.task_name}, {"labels", schema.labels}, {"aliases", schema.aliases}};
}

void from_json(const json& j, LabelSchema& schema) {
  schema = LabelSchema{};
  read_if(j, "task_name", schema.task_name);
  read_if(j, "labels", schema.labels);
  read_if(j, "aliases", schema.aliases);
}

void to_json(json& j, const PromptSpec& p) {
  j = json{{"id", p.id},
           {"instruction", p.instruction},
           {"extraction", to_string(p.extraction)},
           {"parent_id", optional_string(p.parent_id)},
           {"generation", p.generation},
           {"origin", to_string(p.origin)}};
}

void from_json(const json& j, PromptSpec& p) {
  p = PromptSpec{};
  read_if(j, "id", p.id);
  p.instruction = j.at("instruction").get<std::string>();
  if (auto it = j.find("extraction"); it != j.end() && it->is_string()) {
    p.extraction = parse_extraction_mode(it->get<std::string>());
  }
  p.parent_id = read_optional_string(j, "parent_id");
  read_if(j, "generation", p.generation);
  if (auto it = j.find("origin"); it != j.end() && it->is_string()) p.origin = parse_prompt_origin(it->get<std::string>());
}

void to_json(json& j, const Usage& u) { j = json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}}; }

void from_json(const json& j, Usage& u) {
  u = Usage{};
  read_if(j, "input_tokens", u.input_tokens);
  read_if(j, "output_tokens", u.output_tokens);
}

void to_json(json& j, const Annotation& a) {
  j = json{{"record_id", a.record_id},
           {"label", optional_string(a.label)},
           {"attempts", a.attempts},
           {"usage", a.usage},
           {"error", optional_string(a.error)}};
}

void from_json(const json& j, Annotation& a) {
  a = Annotation{};
  a.record_id = j.at("record_id").get<std::string>();
  a.label = read_optional_string(j, "label");
  read_if(j, "attempts", a.attempts);
  read_if(j, "usage", a.usage);
  a.error = read_optional_string(j, "error");
}

void to_json(json& j, const ConfusionCounts& c) {
  json classes = json::array();
  for (std::size_t i = 0; i < c.classes.size(); ++i) {
    classes.push_back({{"label", c.classes[i]},
                       {"tp", c.per_class[i].tp},
                       {"fp", c.per_class[i].fp},
                       {"fn", c.per_class[i].fn}});
  }
  j = json{{"classes", std::move(classes)}, {"unparsed_fp", c.unparsed.fp}, {"n", c.n}};
}

void from_json(const json& j, ConfusionCounts& c) {
  c = ConfusionCounts{};
  for (const auto& entry : j.at("classes")) {
    c.classes.push_back(entry.at("label").get<std::string>());
    c.per_class.push_back(
        {entry.at("tp").get<std::int64_t>(), entry.at("fp").get<std::int64_t>(), entry.at("fn").get<std::int64_t>()});
  }
  read_if(j, "unparsed_fp", c.unparsed.fp);
  read_if(j, "n", c.n);
}

void to_json(json& j, const EvalReport& r) {
  j = json{{"prompt_id", r.prompt_id},
           {"micro_f1", r.micro_f1},
           {"accuracy", r.accuracy},
           {"ci_low", r.ci_low},
           {"ci_high", r.ci_high},
           {"n", r.n},
           {"unparsed_count", r.unparsed_count},
           {"counts", r.counts},
           {"record_ids", r.record_ids}};
}

void from_json(const json& j, EvalReport& r) {
  r = EvalReport{};
  read_if(j, "prompt_id", r.prompt_id);
  read_if(j, "micro_f1", r.micro_f1);
  read_if(j, "accuracy", r.accuracy);
  read_if(j, "ci_low", r.ci_low);
  read_if(j, "ci_high", r.ci_high);
  read_if(j, "n", r.n);
  read_if(j, "unparsed_count", r.unparsed_count);
  read_if(j, "counts", r.counts);
  read_if(j, "record_ids", r.record_ids);
}

void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"population", c.population},
           {"elites", c.elites},
           {"mutations_per_elite", c.mutations_per_elite},
           {"generations", c.generations},
           {"fitness_subset_size", c.fitness_subset_size},
           {"meta_prompt", c.meta_prompt},
           {"mutation_temperature", c.mutation_temperature},
           {"rng_seed", c.rng_seed},
           {"mutation_model", c.mutation_model},
           {"mutation_max_output_tokens", c.mutation_max_output_tokens},
           {"preserve_format_directive", c.preserve_format_directive},
           {"format_directive", optional_string(c.format_directive)},
           {"best", c.best == BestSelection::LastGeneration ? "last" : "overall"},
           {"run_id", c.run_id}};
}

void merge_optimizer_config(const json& j, OptimizerConfig& c) {
  read_if(j, "population", c.population);
  read_if(j, "elites", c.elites);
  read_if(j, "mutations_per_elite", c.mutations_per_elite);
  read_if(j, "generations", c.generations);
  read_if(j, "fitness_subset_size", c.fitness_subset_size);
  read_if(j, "meta_prompt", c.meta_prompt);
  read_if(j, "mutation_temperature", c.mutation_temperature);
  read_if(j, "rng_seed", c.rng_seed);
  read_if(j, "mutation_model", c.mutation_model);
  read_if(j, "mutation_max_output_tokens", c.mutation_max_output_tokens);
  read_if(j, "preserve_format_directive", c.preserve_format_directive);
  if (auto d = read_optional_string(j, "format_directive")) c.format_directive = d;
  if (auto best = read_optional_string(j, "best")) {
    if (*best == "last") {
      c.best = BestSelection::LastGeneration;
    } else if (*best == "overall") {
      c.best = BestSelection::Overall;
    } else {
      throw InvalidArgument("best must be 'last' or 'overall'");
    }
  }
  read_if(j, "run_id", c.run_id);
}

void from_json(const json& j, OptimizerConfig& c) {
  c = OptimizerConfig{};
  merge_optimizer_config(j, c);
}

void to_json(json& j, const ScoredPrompt& s) {
  j = json{{"prompt", s.prompt}, {"score", s.score}, {"eval_errors", s.eval_errors}};
}

void to_json(json& j, const LineageEdge& e) { j = json{{"parent_id", e.parent_id}, {"child_id", e.child_id}}; }

void to_json(json& j, const AnnotationPolicy& p) {
  j = json{{"model", p.model},
           {"max_parse_retries", p.max_parse_retries},
           {"label_temperature", p.label_temperature},
           {"parallelism", p.parallelism},
           {"max_output_tokens", p.max_output_tokens},
           {"corrective_suffix", p.corrective_suffix},
           {"system_message", optional_string(p.system_message)},
           {"fail_fast", p.fail_fast}};
}

void merge_policy(const json& j, AnnotationPolicy& p) {
  read_if(j, "model", p.model);
  read_if(j, "max_parse_retries", p.max_parse_retries);
  read_if(j, "label_temperature", p.label_temperature);
  read_if(j, "parallelism", p.parallelism);
  read_if(j, "max_output_tokens", p.max_output_tokens);
  read_if(j, "corrective_suffix", p.corrective_suffix);
  if (auto s = read_optional_string(j, "system_message")) p.system_message = s;
  read_if(j, "fail_fast", p.fail_fast);
}

json run_summary(const OptRun& run) {
  json scores = json::array();
  for (const auto& generation : run.generations) scores.push_back(generation.front().score);
  return json{{"run_id", run.run_id},
              {"config", run.config},
              {"best", run.best},
              {"best_generation_scores", std::move(scores)},
              {"generations", run.generations.size()},
              {"mutation_calls", run.mutation_calls},
              {"fitness_subset_size", run.fitness_subset_ids.size()},
              {"final_report", run.final_report},
              {"warnings", run.warnings}};
}

}  // namespace promptforge
