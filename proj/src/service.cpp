#include "promptforge/service.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "promptforge/dataio.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/json_io.hpp"

namespace promptforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class JobKind { Label, Eval, Optimize };
enum class JobStatus { Queued, Running, Done, Failed, Cancelled };

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::Label:
      return "label";
    case JobKind::Eval:
      return "eval";
    case JobKind::Optimize:
      return "optimize";
  }
  return "label";
}

std::string_view to_string(JobStatus status) {
  switch (status) {
    case JobStatus::Queued:
      return "queued";
    case JobStatus::Running:
      return "running";
    case JobStatus::Done:
      return "done";
    case JobStatus::Failed:
      return "failed";
    case JobStatus::Cancelled:
      return "cancelled";
  }
  return "queued";
}

struct Job {
  std::string id;
  JobKind kind = JobKind::Label;
  std::mutex mu;
  std::condition_variable cv;
  JobStatus status = JobStatus::Queued;
  std::vector<std::string> frames;  // formatted SSE events, replayed on reattach
  std::size_t progress_done = 0;
  json result;
  std::string labelled_csv;
  std::string annotations_jsonl;
  std::string error;
  std::optional<fs::path> run_log;
  std::stop_source stop;
  std::function<void(Job&)> work;

  bool terminal() const {
    return status == JobStatus::Done || status == JobStatus::Failed || status == JobStatus::Cancelled;
  }

  void emit(std::string_view event, const json& data) {
    {
      std::lock_guard lock(mu);
      frames.push_back("event: " + std::string(event) + "\ndata: " + data.dump() + "\n\n");
    }
    cv.notify_all();
  }

  // Progress frames are dropped if they would step backwards.
  void progress(std::size_t done, std::size_t total) {
    {
      std::lock_guard lock(mu);
      if (done < progress_done) return;
      progress_done = done;
      frames.push_back("event: progress\ndata: " + json{{"done", done}, {"total", total}}.dump() + "\n\n");
    }
    cv.notify_all();
  }

  void set_status(JobStatus s) {
    {
      std::lock_guard lock(mu);
      status = s;
    }
    cv.notify_all();
  }
};

/// FIFO queue drained by a fixed set of worker threads.
class Lane {
 public:
  explicit Lane(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this](std::stop_token st) { loop(st); });
    }
  }

  ~Lane() { shutdown(); }

  void push(std::shared_ptr<Job> job) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

  void shutdown() {
    for (auto& t : threads_) t.request_stop();
    cv_.notify_all();
    threads_.clear();
  }

 private:
  void loop(std::stop_token st) {
    while (true) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mu_);
        if (!cv_.wait(lock, st, [&] { return !queue_.empty(); })) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      run(*job);
    }
  }

  static void run(Job& job) {
    if (job.stop.stop_requested()) {
      job.emit("error", json{{"message", "cancelled"}});
      job.set_status(JobStatus::Cancelled);
      return;
    }
    job.set_status(JobStatus::Running);
    try {
      job.work(job);
      job.emit("done", json{{"result", job.result}});
      job.set_status(JobStatus::Done);
    } catch (const Cancelled&) {
      job.emit("error", json{{"message", "cancelled"}});
      job.set_status(JobStatus::Cancelled);
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(job.mu);
        job.error = e.what();
      }
      job.emit("error", json{{"message", e.what()}});
      job.set_status(JobStatus::Failed);
    }
  }

  std::mutex mu_;
  std::condition_variable_any cv_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::vector<std::jthread> threads_;
};

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw HttpError(400, "request body must be a JSON object");
  return body;
}

std::string form_value(const httplib::Request& req, const std::string& name) {
  if (req.has_file(name)) return req.get_file_value(name).content;
  if (req.has_param(name)) return req.get_param_value(name);
  return {};
}

json dataset_summary(const std::string& handle, const Dataset& d) {
  return json{{"handle", handle},
              {"n", d.records.size()},
              {"labelled", d.fully_labelled()},
              {"labelled_count", d.labelled_count()},
              {"labels", d.schema.labels},
              {"provenance", d.provenance}};
}

PromptSpec prompt_from(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw HttpError(422, std::string("missing '") + field + "'");
  PromptSpec p;
  if (it->is_string()) {
    p.instruction = it->get<std::string>();
  } else if (it->is_object()) {
    p = it->get<PromptSpec>();
  } else {
    throw HttpError(422, std::string("'") + field + "' must be a string or object");
  }
  if (text::trim(p.instruction).empty()) throw HttpError(422, "prompt instruction is empty");
  return p;
}

}  // namespace

struct Service::Impl {
  ServiceOptions options;
  ProviderFactory factory;
  httplib::Server server;
  std::thread listener;
  bool bound = false;

  std::mutex state_mu;  // guards everything below
  std::map<std::string, std::shared_ptr<const Dataset>> datasets;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::optional<std::string> api_key;
  std::size_t next_dataset = 0;
  std::size_t next_job = 0;
  std::atomic<bool> shutting_down{false};

  Lane batch_lane;
  Lane optimize_lane{1};

  Impl(ServiceOptions o, ProviderFactory f)
      : options(std::move(o)), factory(std::move(f)), batch_lane(std::max(1, options.job_concurrency)) {
    routes();
  }

  std::string add_dataset(Dataset d) {
    std::lock_guard lock(state_mu);
    std::string handle = "ds" + std::to_string(++next_dataset);
    datasets.emplace(handle, std::make_shared<const Dataset>(std::move(d)));
    return handle;
  }

  std::shared_ptr<const Dataset> dataset(const std::string& handle) {
    std::lock_guard lock(state_mu);
    auto it = datasets.find(handle);
    if (it == datasets.end()) throw HttpError(404, "unknown dataset handle '" + handle + "'");
    return it->second;
  }

  std::shared_ptr<Job> job(const std::string& id) {
    std::lock_guard lock(state_mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw HttpError(404, "unknown job '" + id + "'");
    return it->second;
  }

  std::shared_ptr<ChatProvider> job_provider() {
    std::optional<std::string> key;
    {
      std::lock_guard lock(state_mu);
      key = api_key;
    }
    if (!key) throw HttpError(409, "no access key set; PUT /api/key first");
    ProviderConfig cfg = options.provider;
    cfg.api_key.secret = std::move(key);
    return factory ? factory(cfg) : make_provider(cfg);
  }

  std::shared_ptr<Job> new_job(JobKind kind) {
    auto j = std::make_shared<Job>();
    j->kind = kind;
    std::lock_guard lock(state_mu);
    j->id = "job" + std::to_string(++next_job);
    jobs.emplace(j->id, j);
    return j;
  }

  AnnotationPolicy policy_from(const json& body) {
    AnnotationPolicy policy;
    policy.model = options.default_model;
    if (auto it = body.find("policy"); it != body.end() && it->is_object()) merge_policy(*it, policy);
    validate(policy);
    return policy;
  }

  json submit_batch(const json& body, JobKind kind) {
    auto provider = job_provider();
    auto data = dataset(body.value("dataset", ""));
    PromptSpec prompt = prompt_from(body, "prompt");
    if (prompt.id.empty()) prompt.id = "prompt";
    if (kind == JobKind::Eval && !data->fully_labelled()) {
      throw HttpError(422, "gold labels required: dataset has unlabelled records");
    }
    const AnnotationPolicy policy = policy_from(body);

    auto j = new_job(kind);
    j->work = [data, provider, prompt, policy, kind](Job& job) {
      AnnotationSet set = label_dataset(
          prompt, *data, data->schema, policy, *provider,
          [&job](std::size_t done, std::size_t total) { job.progress(done, total); }, job.stop.get_token());
      json result{{"kind", to_string(kind)},
                  {"prompt", prompt},
                  {"n", set.annotations.size()},
                  {"unparsed", set.unparsed_count()},
                  {"usage", set.total_usage()}};
      if (kind == JobKind::Eval) {
        const EvalReport report = score(set, *data);
        result["report"] = report;
        result["micro_f1"] = report.micro_f1;
        result["accuracy"] = report.accuracy;
        result["display"] = format_score(report);
      }
      std::string csv = format_labelled_csv(*data, set);
      std::string jsonl = format_annotations(set);
      std::lock_guard lock(job.mu);
      job.result = std::move(result);
      job.labelled_csv = std::move(csv);
      job.annotations_jsonl = std::move(jsonl);
    };
    batch_lane.push(j);
    return json{{"job_id", j->id}};
  }

  json submit_optimize(const json& body) {
    auto provider = job_provider();
    auto data = dataset(body.value("dataset", ""));
    if (data->labelled_count() == 0) throw HttpError(422, "optimization needs a labelled dataset");
    PromptSpec seed = prompt_from(body, body.contains("seed_prompt") ? "seed_prompt" : "prompt");
    OptimizerConfig config;
    config.mutation_model = options.default_model;
    if (auto it = body.find("config"); it != body.end() && it->is_object()) merge_optimizer_config(*it, config);
    validate(config);
    if (data->labelled_count() <= static_cast<std::size_t>(config.fitness_subset_size)) {
      throw HttpError(422, "dataset needs more than " + std::to_string(config.fitness_subset_size) +
                               " labelled records for this fitness subset size");
    }
    const AnnotationPolicy policy = policy_from(body);

    auto j = new_job(JobKind::Optimize);
    if (options.run_log_dir) {
      fs::create_directories(*options.run_log_dir);
      j->run_log = *options.run_log_dir / (j->id + ".jsonl");
    }
    j->work = [data, provider, seed, config, policy](Job& job) {
      std::unique_ptr<RunLogWriter> writer;
      if (job.run_log) writer = std::make_unique<RunLogWriter>(*job.run_log);
      RunObserver obs = writer ? writer->observer() : RunObserver{};
      RunObserver wrapped;
      wrapped.on_start = obs.on_start;
      wrapped.on_finish = obs.on_finish;
      wrapped.on_progress = [&job](std::size_t done, std::size_t total) { job.progress(done, total); };
      wrapped.on_generation = [&job, inner = obs.on_generation](int index, const std::vector<ScoredPrompt>& scored,
                                                               const std::vector<LineageEdge>& edges) {
        if (inner) inner(index, scored, edges);
        job.emit(index == 0 ? "initial" : "generation",
                 json{{"index", index}, {"scored", scored}, {"edges", edges}});
      };
      OptRun run = run_apo(config, *data, seed, policy, *provider, wrapped, job.stop.get_token());
      json result = run_summary(run);
      result["kind"] = "optimize";
      result["lineage"] = run.lineage;
      result["generations_detail"] = run.generations;
      result["fitness_subset_ids"] = run.fitness_subset_ids;
      std::lock_guard lock(job.mu);
      job.result = std::move(result);
    };
    optimize_lane.push(j);
    return json{{"job_id", j->id}};
  }

  json job_status(Job& j) {
    std::lock_guard lock(j.mu);
    json out{{"job_id", j.id}, {"kind", to_string(j.kind)}, {"status", to_string(j.status)},
             {"progress_done", j.progress_done}};
    if (!j.error.empty()) out["error"] = j.error;
    return out;
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, e.status, json{{"error", e.what()}});
      } catch (const CacheError& e) {
        send_json(res, 409, json{{"error", e.what()}});
      } catch (const InvalidArgument& e) {
        send_json(res, 422, json{{"error", e.what()}});
      } catch (const DataError& e) {
        send_json(res, 422, json{{"error", e.what()}});
      } catch (const json::exception& e) {
        send_json(res, 422, json{{"error", std::string("bad request field: ") + e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, json{{"error", e.what()}});
      }
    };
  }

  void routes() {
    server.Post("/api/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("file")) throw HttpError(422, "multipart field 'file' is required");
      const auto file = req.get_file_value("file");
      if (text::trim(file.content).empty()) throw HttpError(422, "uploaded file is empty");

      ColumnMapping mapping;
      if (auto v = form_value(req, "text_column"); !v.empty()) mapping.text_column = v;
      if (auto v = form_value(req, "label_column"); !v.empty()) mapping.label_column = v;
      if (auto v = form_value(req, "id_column"); !v.empty()) mapping.id_column = v;
      if (form_value(req, "no_header") == "true") mapping.has_header = false;

      LabelSchema schema;
      schema.task_name = form_value(req, "task");
      for (auto& l : text::split(form_value(req, "labels"), ',')) {
        if (auto t = text::trim(l); !t.empty()) schema.labels.push_back(t);
      }
      if (schema.labels.empty()) throw HttpError(422, "form field 'labels' is required (comma-separated)");
      const std::string fmt = form_value(req, "format");
      const DataFormat format = fmt.empty() ? guess_data_format(file.filename) : parse_data_format(fmt);

      Dataset d = parse_dataset(file.content, format, mapping, schema, file.filename);
      const std::string handle = add_dataset(std::move(d));
      send_json(res, 200, dataset_summary(handle, *dataset(handle)));
    }));

    server.Get("/api/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      std::lock_guard lock(state_mu);
      for (const auto& [h, d] : datasets) out.push_back(dataset_summary(h, *d));
      send_json(res, 200, out);
    }));

    server.Get(R"(/api/datasets/([^/]+)/download)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto d = dataset(req.matches[1]);
      res.set_header("Content-Disposition", "attachment; filename=\"" + std::string(req.matches[1]) + ".csv\"");
      res.set_content(format_dataset(*d, DataFormat::Csv), "text/csv");
    }));

    server.Delete(R"(/api/datasets/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(state_mu);
      if (datasets.erase(req.matches[1]) == 0) throw HttpError(404, "unknown dataset handle");
      send_json(res, 200, json{{"deleted", std::string(req.matches[1])}});
    }));

    server.Post("/api/split", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      auto d = dataset(body.value("dataset", ""));
      SplitSpec spec;
      if (body.contains("count")) {
        spec.size = body["count"].get<std::int64_t>();
      } else if (body.contains("fraction")) {
        spec.size = body["fraction"].get<double>();
      } else {
        throw HttpError(422, "split needs 'fraction' or 'count'");
      }
      spec.seed = body.value("seed", std::uint64_t{0});
      spec.stratify = body.value("stratify", false);
      auto [a, b] = split(*d, spec);
      const std::string ha = add_dataset(std::move(a));
      const std::string hb = add_dataset(std::move(b));
      send_json(res, 200, json{{"a", dataset_summary(ha, *dataset(ha))}, {"b", dataset_summary(hb, *dataset(hb))}});
    }));

    server.Post("/api/jobs/label", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 202, submit_batch(parse_body(req), JobKind::Label));
    }));
    server.Post("/api/jobs/eval", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 202, submit_batch(parse_body(req), JobKind::Eval));
    }));
    server.Post("/api/jobs/optimize", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 202, submit_optimize(parse_body(req)));
    }));

    server.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, job_status(*job(req.matches[1])));
    }));

    server.Get(R"(/api/jobs/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = job(req.matches[1]);
      auto cursor = std::make_shared<std::size_t>(0);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, j, cursor](std::size_t, httplib::DataSink& sink) {
        std::unique_lock lock(j->mu);
        j->cv.wait_for(lock, std::chrono::milliseconds(200),
                       [&] { return j->frames.size() > *cursor || j->terminal(); });
        while (*cursor < j->frames.size()) {
          const std::string frame = j->frames[(*cursor)++];
          lock.unlock();
          if (!sink.write(frame.data(), frame.size())) return false;
          lock.lock();
        }
        if (j->terminal() && *cursor == j->frames.size()) {
          lock.unlock();
          sink.done();
          return true;
        }
        return !shutting_down.load();
      });
    }));

    server.Get(R"(/api/jobs/([^/]+)/result)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = job(req.matches[1]);
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "json";
      std::lock_guard lock(j->mu);
      switch (j->status) {
        case JobStatus::Queued:
        case JobStatus::Running:
          send_json(res, 425, json{{"error", "job not ready"}, {"status", to_string(j->status)}});
          return;
        case JobStatus::Failed:
          send_json(res, 422, json{{"error", j->error}, {"status", "failed"}});
          return;
        case JobStatus::Cancelled:
          send_json(res, 410, json{{"error", "job was cancelled"}, {"status", "cancelled"}});
          return;
        case JobStatus::Done:
          break;
      }
      if (format == "csv" && j->kind != JobKind::Optimize) {
        res.set_header("Content-Disposition", "attachment; filename=\"" + j->id + "-labelled.csv\"");
        res.set_content(j->labelled_csv, "text/csv");
      } else if (format == "jsonl" && j->kind != JobKind::Optimize) {
        res.set_content(j->annotations_jsonl, "application/x-ndjson");
      } else {
        send_json(res, 200, j->result);
      }
    }));

    server.Get(R"(/api/jobs/([^/]+)/runlog)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = job(req.matches[1]);
      if (!j->run_log || !fs::exists(*j->run_log)) throw HttpError(404, "no run log for this job");
      res.set_content(read_file(*j->run_log), "application/x-ndjson");
    }));

    server.Post(R"(/api/jobs/([^/]+)/cancel)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = job(req.matches[1]);
      j->stop.request_stop();
      send_json(res, 202, job_status(*j));
    }));

    server.Delete(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = job(req.matches[1]);
      j->stop.request_stop();
      std::lock_guard lock(state_mu);
      jobs.erase(j->id);
      send_json(res, 200, json{{"deleted", j->id}});
    }));

    server.Put("/api/key", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const std::string key = body.value("key", "");
      if (text::trim(key).empty()) throw HttpError(422, "field 'key' must be a nonempty string");
      {
        std::lock_guard lock(state_mu);
        api_key = key;
      }
      send_json(res, 200, json{{"key_present", true}});
    }));

    server.Delete("/api/key", guarded([this](const httplib::Request&, httplib::Response& res) {
      {
        std::lock_guard lock(state_mu);
        api_key.reset();
      }
      send_json(res, 200, json{{"key_present", false}});
    }));

    server.Delete("/api/cache", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"evicted", clear_cache(options.provider)}});
    }));

    server.Get("/api/session", guarded([this](const httplib::Request&, httplib::Response& res) {
      json ds = json::array();
      std::vector<std::shared_ptr<Job>> job_list;
      bool key_present = false;
      {
        std::lock_guard lock(state_mu);
        key_present = api_key.has_value();
        for (const auto& [h, d] : datasets) ds.push_back(dataset_summary(h, *d));
        for (const auto& [id, j] : jobs) job_list.push_back(j);
      }
      json js = json::array();
      for (const auto& j : job_list) js.push_back(job_status(*j));
      send_json(res, 200, json{{"key_present", key_present}, {"datasets", ds}, {"jobs", js}});
    }));

    if (options.ui_dir) server.set_mount_point("/", options.ui_dir->string());
  }

  void bind() {
    if (bound) return;
    int port = options.port;
    if (port == 0) {
      port = server.bind_to_any_port(options.host);
      if (port < 0) throw Error("cannot bind " + options.host);
    } else if (!server.bind_to_port(options.host, port)) {
      throw Error("cannot bind " + options.host + ":" + std::to_string(port));
    }
    options.port = port;
    bound = true;
  }

  void shutdown() {
    if (shutting_down.exchange(true)) return;
    {
      std::lock_guard lock(state_mu);
      for (auto& [id, j] : jobs) j->stop.request_stop();
    }
    server.stop();
    if (listener.joinable()) listener.join();
    batch_lane.shutdown();
    optimize_lane.shutdown();
  }
};

Service::Service(ServiceOptions options, ProviderFactory factory)
    : impl_(std::make_unique<Impl>(std::move(options), std::move(factory))) {}

Service::~Service() { stop(); }

int Service::start() {
  impl_->bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->options.port;
}

void Service::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_) impl_->shutdown();
}

}  // namespace promptforge
