#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "promptforge/annotator.hpp"
#include "promptforge/cli.hpp"
#include "promptforge/dataio.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/json_io.hpp"
#include "promptforge/metrics.hpp"
#include "promptforge/optimizer.hpp"
#include "promptforge/providers.hpp"

namespace py = pybind11;
namespace pf = promptforge;
using nlohmann::json;

namespace {

// Values cross the boundary as plain dicts and lists via the json module.
json to_json(const py::handle& obj) {
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return json::parse(text);
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

pf::LabelSchema schema_from(const py::object& labels, const py::object& aliases, const std::string& task) {
  pf::LabelSchema s;
  s.task_name = task;
  s.labels = labels.cast<std::vector<std::string>>();
  if (!aliases.is_none()) s.aliases = aliases.cast<std::map<std::string, std::string>>();
  pf::require_valid_schema(s);
  return s;
}

json dataset_json(const pf::Dataset& d) {
  json records = json::array();
  for (const auto& r : d.records) {
    records.push_back({{"id", r.id}, {"text", r.text}, {"gold", r.gold ? json(*r.gold) : json(nullptr)}});
  }
  return {{"schema", d.schema}, {"records", std::move(records)}, {"provenance", d.provenance}};
}

pf::Dataset dataset_from(const py::handle& obj) {
  const json j = to_json(obj);
  pf::Dataset d;
  d.schema = j.at("schema").get<pf::LabelSchema>();
  d.provenance = j.value("provenance", "");
  for (const auto& r : j.at("records")) {
    pf::TextRecord rec{r.at("id").get<std::string>(), r.at("text").get<std::string>(), std::nullopt};
    if (r.contains("gold") && r["gold"].is_string()) rec.gold = r["gold"].get<std::string>();
    d.records.push_back(std::move(rec));
  }
  return d;
}

json annotations_json(const pf::AnnotationSet& s) {
  return {{"prompt_id", s.prompt_id},
          {"provenance", s.provenance},
          {"started_at", s.started_at},
          {"finished_at", s.finished_at},
          {"unparsed", s.unparsed_count()},
          {"usage", s.total_usage()},
          {"annotations", s.annotations}};
}

pf::PromptSpec prompt_from(const py::handle& obj, const char* default_id) {
  pf::PromptSpec p;
  if (py::isinstance<py::str>(obj)) {
    p.instruction = obj.cast<std::string>();
  } else {
    p = to_json(obj).get<pf::PromptSpec>();
  }
  if (p.id.empty()) p.id = default_id;
  return p;
}

pf::AnnotationPolicy policy_from(const py::object& obj) {
  pf::AnnotationPolicy policy;
  if (!obj.is_none()) pf::merge_policy(to_json(obj), policy);
  pf::validate(policy);
  return policy;
}

// None: live endpoint configured by keyword arguments and the environment.
// dict: {"rules": [{"contains", "reply"}], "default"}.
// callable: f(messages, variant) -> str | None, messages as [{"role", "content"}].
std::shared_ptr<pf::ChatProvider> provider_from(const py::object& obj, const py::dict& settings) {
  pf::ProviderConfig cfg;
  if (settings.contains("endpoint")) cfg.endpoint_url = settings["endpoint"].cast<std::string>();
  if (settings.contains("key_env")) cfg.api_key.env_var = settings["key_env"].cast<std::string>();
  if (settings.contains("cache_dir") && !settings["cache_dir"].is_none()) {
    cfg.cache_dir = settings["cache_dir"].cast<std::string>();
  }
  pf::validate(cfg);
  if (obj.is_none()) {
    cfg.api_key.resolve();
    return pf::make_provider(cfg);
  }
  std::shared_ptr<pf::ChatProvider> scripted;
  if (py::isinstance<py::dict>(obj)) {
    const json j = to_json(obj);
    std::vector<pf::ScriptedProvider::KeywordRule> rules;
    for (const auto& r : j.value("rules", json::array())) {
      rules.push_back({r.at("contains").get<std::string>(), r.at("reply").get<std::string>()});
    }
    std::optional<std::string> fallback;
    if (j.contains("default")) fallback = j["default"].get<std::string>();
    scripted = pf::ScriptedProvider::from_keywords(std::move(rules), std::move(fallback));
  } else {
    auto fn = std::make_shared<py::object>(obj);
    scripted = std::make_shared<pf::ScriptedProvider>([fn](const pf::ChatRequest& r) -> std::optional<std::string> {
      py::gil_scoped_acquire gil;
      try {
        py::list messages;
        for (const auto& m : r.messages) {
          py::dict d;
          d["role"] = m.role == pf::Role::System ? "system" : m.role == pf::Role::User ? "user" : "assistant";
          d["content"] = m.content;
          messages.append(d);
        }
        py::object reply = (*fn)(messages, r.variant);
        if (reply.is_none()) return std::nullopt;
        return reply.cast<std::string>();
      } catch (py::error_already_set& e) {
        throw pf::ScriptMiss(std::string("python provider raised: ") + e.what());
      }
    });
  }
  return pf::with_cache(scripted, cfg);
}

py::object label(const py::object& dataset, const py::object& prompt, const py::object& provider,
                 const py::object& policy, const py::kwargs& settings) {
  const pf::Dataset d = dataset_from(dataset);
  const pf::PromptSpec p = prompt_from(prompt, "prompt");
  const pf::AnnotationPolicy pol = policy_from(policy);
  auto prov = provider_from(provider, settings);
  pf::AnnotationSet set;
  {
    py::gil_scoped_release release;
    set = pf::label_dataset(p, d, d.schema, pol, *prov);
  }
  return to_py(annotations_json(set));
}

py::object evaluate(const py::object& dataset, const py::object& prompt, const py::object& provider,
                    const py::object& policy, const py::kwargs& settings) {
  const pf::Dataset d = dataset_from(dataset);
  const pf::PromptSpec p = prompt_from(prompt, "prompt");
  const pf::AnnotationPolicy pol = policy_from(policy);
  auto prov = provider_from(provider, settings);
  pf::EvalReport report;
  {
    py::gil_scoped_release release;
    report = pf::evaluate(p, d, d.schema, pol, *prov);
  }
  json out = report;
  out["display"] = pf::format_score(report);
  return to_py(out);
}

py::object optimize(const py::object& dataset, const py::object& seed_prompt, const py::object& provider,
                    const py::object& config, const py::object& policy, const py::object& run_log,
                    const py::kwargs& settings) {
  const pf::Dataset d = dataset_from(dataset);
  pf::PromptSpec seed = prompt_from(seed_prompt, "");
  pf::OptimizerConfig cfg;
  if (!config.is_none()) pf::merge_optimizer_config(to_json(config), cfg);
  pf::validate(cfg);
  const pf::AnnotationPolicy pol = policy_from(policy);
  auto prov = provider_from(provider, settings);
  std::unique_ptr<pf::RunLogWriter> writer;
  if (!run_log.is_none()) writer = std::make_unique<pf::RunLogWriter>(run_log.cast<std::string>());
  json out;
  {
    py::gil_scoped_release release;
    const pf::OptRun run = pf::run_apo(cfg, d, seed, pol, *prov, writer ? writer->observer() : pf::RunObserver{});
    out = pf::run_summary(run);
    out["lineage"] = run.lineage;
    out["generations_detail"] = run.generations;
    out["fitness_subset_ids"] = run.fitness_subset_ids;
  }
  return to_py(out);
}

}  // namespace

PYBIND11_MODULE(_promptforge, m) {
  m.doc() = "Text annotation with chat models and evolutionary prompt optimization.";

  auto error = py::register_exception<pf::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<pf::InvalidArgument>(m, "InvalidArgument", error);
  py::register_exception<pf::CacheError>(m, "CacheError", error);
  py::register_exception<pf::Cancelled>(m, "Cancelled", error);
  auto provider_error = py::register_exception<pf::ProviderError>(m, "ProviderError", error);
  py::register_exception<pf::AuthError>(m, "AuthError", provider_error);
  py::register_exception<pf::TransportError>(m, "TransportError", provider_error);
  py::register_exception<pf::MalformedProviderReply>(m, "MalformedProviderReply", provider_error);
  py::register_exception<pf::ScriptMiss>(m, "ScriptMiss", provider_error);
  auto data_error = py::register_exception<pf::DataError>(m, "DataError", error);
  py::register_exception<pf::ParseError>(m, "ParseError", data_error);
  py::register_exception<pf::UnknownLabel>(m, "UnknownLabel", data_error);
  py::register_exception<pf::MissingGold>(m, "MissingGold", data_error);
  py::register_exception<pf::TooFewLabelled>(m, "TooFewLabelled", data_error);
  py::register_exception<pf::StratifyWithoutGold>(m, "StratifyWithoutGold", data_error);
  py::register_exception<pf::VersionError>(m, "VersionError", data_error);

  m.def(
      "normalize_label",
      [](const std::string& raw, const py::object& labels, const py::object& aliases, const std::string& extraction) {
        return pf::normalize_label(raw, schema_from(labels, aliases, ""), pf::parse_extraction_mode(extraction));
      },
      py::arg("raw"), py::arg("labels"), py::arg("aliases") = py::none(), py::arg("extraction") = "whole-answer");

  m.def("wald_ci", &pf::wald_ci, py::arg("p"), py::arg("n"), py::arg("z") = 1.96);

  m.def(
      "micro_f1",
      [](const std::vector<std::optional<std::string>>& predicted, const std::vector<std::string>& gold,
         const std::vector<std::string>& labels) { return pf::micro_f1(pf::confusion(labels, predicted, gold)); },
      py::arg("predicted"), py::arg("gold"), py::arg("labels"));

  m.def(
      "load_dataset",
      [](const std::string& path, const py::object& labels, const std::string& text_column,
         const std::optional<std::string>& label_column, const std::optional<std::string>& id_column,
         const std::optional<std::string>& format, const py::object& aliases, const std::string& task) {
        pf::ColumnMapping mapping;
        mapping.text_column = text_column;
        mapping.label_column = label_column;
        mapping.id_column = id_column;
        const auto fmt = format ? pf::parse_data_format(*format) : pf::guess_data_format(path);
        return to_py(dataset_json(pf::load_dataset(path, fmt, mapping, schema_from(labels, aliases, task))));
      },
      py::arg("path"), py::arg("labels"), py::arg("text_column") = "text", py::arg("label_column") = py::none(),
      py::arg("id_column") = py::none(), py::arg("format") = py::none(), py::arg("aliases") = py::none(),
      py::arg("task") = "");

  m.def(
      "save_dataset",
      [](const py::object& dataset, const std::string& path) {
        pf::save_dataset(dataset_from(dataset), path, pf::guess_data_format(path));
      },
      py::arg("dataset"), py::arg("path"));

  m.def(
      "split_dataset",
      [](const py::object& dataset, const py::object& size, std::uint64_t seed, bool stratify) {
        pf::SplitSpec spec;
        if (py::isinstance<py::int_>(size)) {
          spec.size = size.cast<std::int64_t>();
        } else {
          spec.size = size.cast<double>();
        }
        spec.seed = seed;
        spec.stratify = stratify;
        const auto [a, b] = pf::split(dataset_from(dataset), spec);
        return py::make_tuple(to_py(dataset_json(a)), to_py(dataset_json(b)));
      },
      py::arg("dataset"), py::arg("size"), py::arg("seed") = 0, py::arg("stratify") = false);

  m.def("label", &label, py::arg("dataset"), py::arg("prompt"), py::arg("provider") = py::none(),
        py::arg("policy") = py::none());
  m.def("evaluate", &evaluate, py::arg("dataset"), py::arg("prompt"), py::arg("provider") = py::none(),
        py::arg("policy") = py::none());
  m.def("optimize", &optimize, py::arg("dataset"), py::arg("seed_prompt"), py::arg("provider") = py::none(),
        py::arg("config") = py::none(), py::arg("policy") = py::none(), py::arg("run_log") = py::none());

  m.def(
      "read_run_log",
      [](const std::string& path) {
        const pf::RunLog log = pf::read_run_log(path);
        json entries = json::array();
        for (const auto& e : log.entries) {
          entries.push_back({{"generation", e.generation},
                             {"prompt_id", e.prompt_id},
                             {"parent_id", e.parent_id ? json(*e.parent_id) : json(nullptr)},
                             {"instruction", e.instruction},
                             {"score", e.score}});
        }
        json out{{"run_id", log.run_id},
                 {"config", log.config},
                 {"fitness_subset_ids", log.fitness_subset_ids},
                 {"entries", std::move(entries)},
                 {"final", nullptr}};
        if (log.final) {
          out["final"] = {{"best_prompt_id", log.final->best_prompt_id},
                          {"best_instruction", log.final->best_instruction},
                          {"best_score", log.final->best_score},
                          {"report", log.final->report}};
        }
        return to_py(out);
      },
      py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int rc = 0;
        {
          py::gil_scoped_release release;
          rc = pf::run_cli(args, {out, err, {}});
        }
        return py::make_tuple(rc, out.str(), err.str());
      },
      py::arg("args"));
}
