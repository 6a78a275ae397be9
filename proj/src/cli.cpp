#include "promptforge/cli.hpp"

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "promptforge/annotator.hpp"
#include "promptforge/dataio.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/json_io.hpp"
#include "promptforge/metrics.hpp"
#include "promptforge/optimizer.hpp"
#include "promptforge/service.hpp"

namespace promptforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::string path;
  std::string format;
  std::string text_col = "text";
  std::string label_col;
  std::string id_col;
  bool no_header = false;
  std::string labels;
  std::vector<std::string> aliases;
  std::string task;
};

struct PromptOptions {
  std::string text;
  std::string file;
  std::string id;
  std::string extraction = "whole-answer";
};

struct ProviderOptions {
  std::string model = "gpt-3.5-turbo";
  int retries = 3;
  int parallelism = 1;
  double temperature = 0.0;
  int max_tokens = 256;
  std::string system_message;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string key_env{kDefaultKeyEnv};
  std::string cache_dir;
  bool cache_any_temperature = false;
  long timeout_ms = 60000;
  int max_retries = 5;
  long min_interval_ms = 0;
  std::string script;
  std::string report = "human";
};

void add_data_options(CLI::App* cmd, DataOptions& d, bool need_labels) {
  cmd->add_option("--dataset", d.path, "CSV or JSONL input")->required()->check(CLI::ExistingFile);
  cmd->add_option("--format", d.format, "csv or jsonl (default: from extension)");
  cmd->add_option("--text-col", d.text_col, "text column or key");
  cmd->add_option("--label-col", d.label_col, "gold label column or key");
  cmd->add_option("--id-col", d.id_col, "id column or key (default: row number)");
  cmd->add_flag("--no-header", d.no_header, "csv has no header row; columns are 1, 2, ...");
  auto* labels = cmd->add_option("--labels", d.labels, "comma-separated allowed labels");
  if (need_labels) labels->required();
  cmd->add_option("--alias", d.aliases, "alias=label, repeatable");
  cmd->add_option("--task", d.task, "task name");
}

void add_prompt_options(CLI::App* cmd, PromptOptions& p) {
  auto* text = cmd->add_option("--prompt", p.text, "instruction text");
  auto* file = cmd->add_option("--prompt-file", p.file, "file holding the instruction")->check(CLI::ExistingFile);
  text->excludes(file);
  file->excludes(text);
  cmd->add_option("--prompt-id", p.id, "prompt id");
  cmd->add_option("--extraction", p.extraction, "whole-answer or last-word");
}

void add_provider_options(CLI::App* cmd, ProviderOptions& o) {
  cmd->add_option("--model", o.model, "model name");
  cmd->add_option("--retries", o.retries, "re-asks after an unparseable answer");
  cmd->add_option("--parallelism", o.parallelism, "requests in flight");
  cmd->add_option("--temperature", o.temperature, "labelling temperature");
  cmd->add_option("--max-tokens", o.max_tokens, "output token budget per request");
  cmd->add_option("--system-message", o.system_message, "optional system message");
  cmd->add_option("--endpoint", o.endpoint, "chat-completions URL");
  cmd->add_option("--key-env", o.key_env, "environment variable holding the access key");
  cmd->add_option("--cache-dir", o.cache_dir, "response cache directory");
  cmd->add_flag("--cache-any-temperature", o.cache_any_temperature, "cache replies at every temperature");
  cmd->add_option("--timeout-ms", o.timeout_ms, "per-request timeout");
  cmd->add_option("--max-retries", o.max_retries, "transport retries");
  cmd->add_option("--min-interval-ms", o.min_interval_ms, "minimum spacing between requests");
  cmd->add_option("--script", o.script, "offline scripted replies (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--report", o.report, "human or json")->check(CLI::IsMember({"human", "json"}));
}

LabelSchema make_schema(const DataOptions& d) {
  LabelSchema schema;
  schema.task_name = d.task;
  for (const auto& l : text::split(d.labels, ',')) {
    if (auto t = text::trim(l); !t.empty()) schema.labels.push_back(t);
  }
  for (const auto& a : d.aliases) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw UsageError("--alias expects alias=label, got '" + a + "'");
    schema.aliases[text::trim(std::string_view(a).substr(0, eq))] = text::trim(std::string_view(a).substr(eq + 1));
  }
  require_valid_schema(schema);
  return schema;
}

Dataset load(const DataOptions& d, const LabelSchema& schema) {
  ColumnMapping mapping;
  mapping.text_column = d.text_col;
  if (!d.label_col.empty()) mapping.label_column = d.label_col;
  if (!d.id_col.empty()) mapping.id_column = d.id_col;
  mapping.has_header = !d.no_header;
  const DataFormat format = d.format.empty() ? guess_data_format(d.path) : parse_data_format(d.format);
  return load_dataset(d.path, format, mapping, schema);
}

PromptSpec make_prompt(const PromptOptions& p, const char* default_id) {
  if (p.text.empty() && p.file.empty()) throw UsageError("one of --prompt or --prompt-file is required");
  PromptSpec prompt;
  prompt.instruction = p.file.empty() ? p.text : text::trim(read_file(p.file));
  if (text::trim(prompt.instruction).empty()) throw UsageError("prompt is empty");
  prompt.id = p.id.empty() ? default_id : p.id;
  prompt.extraction = parse_extraction_mode(p.extraction);
  return prompt;
}

AnnotationPolicy make_policy(const ProviderOptions& o) {
  AnnotationPolicy policy;
  policy.model = o.model;
  policy.max_parse_retries = o.retries;
  policy.parallelism = o.parallelism;
  policy.label_temperature = o.temperature;
  policy.max_output_tokens = o.max_tokens;
  if (!o.system_message.empty()) policy.system_message = o.system_message;
  validate(policy);
  return policy;
}

ProviderConfig make_provider_config(const ProviderOptions& o) {
  ProviderConfig cfg;
  cfg.endpoint_url = o.endpoint;
  cfg.api_key.env_var = o.key_env;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  cfg.cache_any_temperature = o.cache_any_temperature;
  cfg.request_timeout = std::chrono::milliseconds(o.timeout_ms);
  cfg.max_retries = o.max_retries;
  cfg.min_request_interval = std::chrono::milliseconds(o.min_interval_ms);
  validate(cfg);
  return cfg;
}

// {"rules": [{"contains": "...", "reply": "..."}], "default": "..."}
std::shared_ptr<ChatProvider> scripted_from_file(const std::string& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError("--script: " + path + " is not a JSON object");
  std::vector<ScriptedProvider::KeywordRule> rules;
  for (const auto& r : j.value("rules", json::array())) {
    rules.push_back({r.at("contains").get<std::string>(), r.at("reply").get<std::string>()});
  }
  std::optional<std::string> fallback;
  if (j.contains("default")) fallback = j["default"].get<std::string>();
  return ScriptedProvider::from_keywords(std::move(rules), std::move(fallback));
}

std::shared_ptr<ChatProvider> make_chat_provider(const ProviderOptions& o, const CliIo& io) {
  const ProviderConfig cfg = make_provider_config(o);
  if (!o.script.empty()) return with_cache(scripted_from_file(o.script), cfg);
  if (io.factory) return io.factory(cfg);
  cfg.api_key.resolve();  // fail before any work when the key is missing
  return make_provider(cfg);
}

ProgressSink progress_to(std::ostream& err, bool enabled) {
  if (!enabled) return {};
  return [&err](std::size_t done, std::size_t total) {
    if (done == total || done % 50 == 0) err << "labelled " << done << "/" << total << "\n";
  };
}

void print_report(std::ostream& out, const EvalReport& report, const std::string& mode) {
  if (mode == "json") {
    out << json(report).dump() << "\n";
    return;
  }
  out << "prompt " << report.prompt_id << "\n";
  out << "micro-F1 " << format_score(report) << "  (n=" << report.n << ", unparsed=" << report.unparsed_count
      << ")\n";
}

struct LabelArgs {
  DataOptions data;
  PromptOptions prompt;
  ProviderOptions provider;
  std::string out;
  std::string labelled_csv;
  std::string ci = "wald";
  std::uint64_t bootstrap_seed = 0;
};

int cmd_label(const LabelArgs& a, const CliIo& io, bool evaluate) {
  const LabelSchema schema = make_schema(a.data);
  const Dataset data = load(a.data, schema);
  if (evaluate && !data.fully_labelled()) {
    throw MissingGold("gold labels required: " + std::to_string(data.records.size() - data.labelled_count()) +
                      " of " + std::to_string(data.records.size()) + " records have no gold label");
  }
  const PromptSpec prompt = make_prompt(a.prompt, "prompt");
  const AnnotationPolicy policy = make_policy(a.provider);
  auto provider = make_chat_provider(a.provider, io);

  const AnnotationSet set =
      label_dataset(prompt, data, schema, policy, *provider, progress_to(io.err, a.provider.report == "human"));
  if (!a.out.empty()) save_annotations(set, a.out);
  if (!a.labelled_csv.empty()) write_file(a.labelled_csv, format_labelled_csv(data, set));

  if (evaluate) {
    const EvalReport report =
        score(set, data, a.ci == "bootstrap" ? CiMethod::Bootstrap : CiMethod::Wald, a.bootstrap_seed);
    print_report(io.out, report, a.provider.report);
    return exit_code::kOk;
  }
  const Usage usage = set.total_usage();
  if (a.provider.report == "json") {
    io.out << json{{"prompt_id", set.prompt_id},
                   {"n", set.annotations.size()},
                   {"unparsed", set.unparsed_count()},
                   {"usage", usage}}
                  .dump()
           << "\n";
  } else {
    io.out << "labelled " << set.annotations.size() << " records (" << set.unparsed_count() << " unparsed, "
           << usage.input_tokens << " input / " << usage.output_tokens << " output tokens)\n";
    if (a.out.empty() && a.labelled_csv.empty()) {
      for (const auto& ann : set.annotations) io.out << ann.record_id << "\t" << ann.label.value_or("") << "\n";
    }
  }
  return exit_code::kOk;
}

struct OptimizeArgs {
  DataOptions data;
  PromptOptions prompt;
  ProviderOptions provider;
  OptimizerConfig config;
  std::string meta_prompt_file;
  std::string best = "last";
  bool no_format_directive = false;
  std::string run_log;
  std::string out_prompt;
};

int cmd_optimize(OptimizeArgs a, const CliIo& io) {
  const LabelSchema schema = make_schema(a.data);
  const Dataset data = load(a.data, schema);
  PromptSpec seed = make_prompt(a.prompt, "");
  if (a.prompt.id.empty()) seed.id.clear();
  if (!a.meta_prompt_file.empty()) a.config.meta_prompt = text::trim(read_file(a.meta_prompt_file));
  a.config.best = a.best == "overall" ? BestSelection::Overall : BestSelection::LastGeneration;
  a.config.preserve_format_directive = !a.no_format_directive;
  a.config.mutation_model = a.provider.model;
  validate(a.config);
  const AnnotationPolicy policy = make_policy(a.provider);
  auto provider = make_chat_provider(a.provider, io);

  std::unique_ptr<RunLogWriter> writer;
  if (!a.run_log.empty()) writer = std::make_unique<RunLogWriter>(a.run_log);
  RunObserver obs = writer ? writer->observer() : RunObserver{};
  const bool human = a.provider.report == "human";
  auto inner = obs.on_generation;
  obs.on_generation = [&, inner](int t, const std::vector<ScoredPrompt>& scored, const std::vector<LineageEdge>& e) {
    if (inner) inner(t, scored, e);
    if (human && !scored.empty()) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "generation %2d  best %.4f  %s\n", t, scored.front().score,
                    scored.front().prompt.id.c_str());
      io.err << buf;
    }
  };

  const OptRun run = run_apo(a.config, data, seed, policy, *provider, obs);
  for (const auto& w : run.warnings) io.err << "warning: " << w << "\n";
  if (!a.out_prompt.empty()) write_file(a.out_prompt, run.best.prompt.instruction + "\n");

  if (!human) {
    io.out << run_summary(run).dump() << "\n";
  } else {
    io.out << "run " << run.run_id << "\n";
    io.out << "best " << run.best.prompt.id << " (generation " << run.best.prompt.generation << ", fitness "
           << format_percent(run.best.score) << ")\n";
    io.out << run.best.prompt.instruction << "\n";
    io.out << "held-out micro-F1 " << format_score(run.final_report) << "  (n=" << run.final_report.n << ")\n";
  }
  return exit_code::kOk;
}

struct SplitArgs {
  DataOptions data;
  double fraction = 0.0;
  std::int64_t count = 0;
  std::uint64_t seed = 0;
  bool stratify = false;
  std::string out_a;
  std::string out_b;
};

int cmd_split(const SplitArgs& a, const CliIo& io) {
  LabelSchema schema;
  if (!a.data.labels.empty()) {
    schema = make_schema(a.data);
  } else {
    if (!a.data.label_col.empty()) throw UsageError("--label-col needs --labels");
    schema.labels = {"a", "b"};  // never consulted without a label column
  }
  const Dataset data = load(a.data, schema);
  SplitSpec spec;
  if (a.count > 0) {
    spec.size = a.count;
  } else {
    spec.size = a.fraction;
  }
  spec.seed = a.seed;
  spec.stratify = a.stratify;
  const auto [part_a, part_b] = split(data, spec);
  const bool keep_labels = !a.data.label_col.empty();
  auto write = [&](const Dataset& d, const std::string& path) {
    Dataset copy = d;
    if (!keep_labels) {
      for (auto& r : copy.records) r.gold.reset();
    }
    save_dataset(copy, path, guess_data_format(path));
  };
  write(part_a, a.out_a);
  write(part_b, a.out_b);
  io.out << a.out_a << ": " << part_a.records.size() << " records\n";
  io.out << a.out_b << ": " << part_b.records.size() << " records\n";
  return exit_code::kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, const CliIo& io) {
  CLI::App app{"Annotate text with chat models, score prompts and optimize them."};
  app.name("promptforge");
  app.require_subcommand(1);
  app.set_version_flag("--version", "promptforge 0.1.0");

  LabelArgs label_args;
  auto* label = app.add_subcommand("label", "label a dataset with a prompt");
  add_data_options(label, label_args.data, true);
  add_prompt_options(label, label_args.prompt);
  add_provider_options(label, label_args.provider);
  label->add_option("--out", label_args.out, "annotations JSONL");
  label->add_option("--labelled-csv", label_args.labelled_csv, "id,text,label,gold CSV");

  LabelArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score a prompt on a labelled dataset");
  add_data_options(eval, eval_args.data, true);
  add_prompt_options(eval, eval_args.prompt);
  add_provider_options(eval, eval_args.provider);
  eval->add_option("--out", eval_args.out, "annotations JSONL");
  eval->add_option("--labelled-csv", eval_args.labelled_csv, "id,text,label,gold CSV");
  eval->add_option("--ci", eval_args.ci, "wald or bootstrap")->check(CLI::IsMember({"wald", "bootstrap"}));
  eval->add_option("--bootstrap-seed", eval_args.bootstrap_seed, "bootstrap resampling seed");

  OptimizeArgs opt_args;
  auto* optimize = app.add_subcommand("optimize", "evolve a seed prompt on a labelled dataset");
  add_data_options(optimize, opt_args.data, true);
  add_prompt_options(optimize, opt_args.prompt);
  add_provider_options(optimize, opt_args.provider);
  optimize->add_option("--population", opt_args.config.population, "prompts per generation");
  optimize->add_option("--elites", opt_args.config.elites, "survivors per generation");
  optimize->add_option("--mutations", opt_args.config.mutations_per_elite, "rewrites per elite");
  optimize->add_option("--generations", opt_args.config.generations, "generations after the initial one");
  optimize->add_option("--subset-size", opt_args.config.fitness_subset_size, "fitness subset size");
  optimize->add_option("--seed", opt_args.config.rng_seed, "subset sampling seed");
  optimize->add_option("--meta-prompt-file", opt_args.meta_prompt_file, "rewrite instruction")
      ->check(CLI::ExistingFile);
  optimize->add_option("--mutation-temperature", opt_args.config.mutation_temperature, "rewrite temperature");
  optimize->add_option("--best", opt_args.best, "last or overall")->check(CLI::IsMember({"last", "overall"}));
  optimize->add_flag("--no-format-directive", opt_args.no_format_directive, "do not re-append the output directive");
  optimize->add_option("--run-log", opt_args.run_log, "JSONL run log");
  optimize->add_option("--out-prompt", opt_args.out_prompt, "write the best instruction here");

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "split a dataset in two");
  add_data_options(split_cmd, split_args.data, false);
  auto* frac = split_cmd->add_option("--fraction", split_args.fraction, "share of records in part A");
  auto* count = split_cmd->add_option("--count", split_args.count, "records in part A");
  frac->excludes(count);
  count->excludes(frac);
  split_cmd->add_option("--seed", split_args.seed, "shuffle seed");
  split_cmd->add_flag("--stratify", split_args.stratify, "keep label proportions");
  split_cmd->add_option("--out-a", split_args.out_a, "part A path")->required();
  split_cmd->add_option("--out-b", split_args.out_b, "part B path")->required();

  auto* cache = app.add_subcommand("cache", "response cache maintenance");
  cache->require_subcommand(1);
  std::string cache_dir;
  auto* cache_clear = cache->add_subcommand("clear", "delete every cached reply");
  cache_clear->add_option("--cache-dir", cache_dir, "response cache directory");

  ServiceOptions serve_opts;
  std::string ui_dir, run_log_dir, serve_cache_dir, serve_endpoint = serve_opts.provider.endpoint_url;
  auto* serve = app.add_subcommand("serve", "run the local web service");
  serve->add_option("--host", serve_opts.host, "bind address");
  serve->add_option("--port", serve_opts.port, "port (0 picks one)");
  serve->add_option("--ui-dir", ui_dir, "static files served at /");
  serve->add_option("--run-log-dir", run_log_dir, "where optimizer run logs go");
  serve->add_option("--job-concurrency", serve_opts.job_concurrency, "label/eval jobs at once");
  serve->add_option("--cache-dir", serve_cache_dir, "response cache directory");
  serve->add_option("--endpoint", serve_endpoint, "chat-completions URL");
  serve->add_option("--model", serve_opts.default_model, "default model");

  std::vector<std::string> argv_store{"promptforge"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return exit_code::kOk;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return exit_code::kOk;
  } catch (const CLI::CallForVersion& e) {
    io.out << e.what() << "\n";
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    io.err << "run 'promptforge --help' for usage\n";
    return exit_code::kUsage;
  }

  try {
    if (*label) return cmd_label(label_args, io, false);
    if (*eval) return cmd_label(eval_args, io, true);
    if (*optimize) return cmd_optimize(opt_args, io);
    if (*split_cmd) {
      if (split_args.count == 0 && split_args.fraction == 0.0) throw UsageError("split needs --fraction or --count");
      return cmd_split(split_args, io);
    }
    if (*cache_clear) {
      if (cache_dir.empty()) throw UsageError("no cache configured (pass --cache-dir)");
      ProviderConfig cfg;
      cfg.cache_dir = cache_dir;
      const std::size_t n = clear_cache(cfg);
      io.out << "evicted " << n << " cached replies\n";
      return exit_code::kOk;
    }
    if (*serve) {
      if (!ui_dir.empty()) serve_opts.ui_dir = ui_dir;
      if (!run_log_dir.empty()) serve_opts.run_log_dir = run_log_dir;
      if (!serve_cache_dir.empty()) serve_opts.provider.cache_dir = serve_cache_dir;
      serve_opts.provider.endpoint_url = serve_endpoint;
      Service service(serve_opts, io.factory);
      const int port = service.start();
      io.err << "listening on http://" << serve_opts.host << ":" << port << "\n";
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      int sig = 0;
      sigwait(&set, &sig);
      service.stop();
      return exit_code::kOk;
    }
  } catch (const UsageError& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const InvalidArgument& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const ProviderError& e) {
    io.err << "provider error: " << e.what() << "\n";
    return exit_code::kProvider;
  } catch (const DataError& e) {
    io.err << "data error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const CacheError& e) {
    io.err << "cache error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const json::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code::kData;
  }
  return exit_code::kUsage;
}

}  // namespace promptforge
