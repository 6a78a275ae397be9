#include "promptforge/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <mutex>
#include <thread>

#include "promptforge/errors.hpp"

namespace promptforge {

void validate(const AnnotationPolicy& policy) {
  if (policy.max_parse_retries < 0) throw InvalidArgument("max_parse_retries must be >= 0");
  if (policy.parallelism < 1) throw InvalidArgument("parallelism must be >= 1");
  if (policy.max_output_tokens < 1) throw InvalidArgument("max_output_tokens must be >= 1");
  if (policy.model.empty()) throw InvalidArgument("model name is empty");
}

std::size_t AnnotationSet::unparsed_count() const {
  return static_cast<std::size_t>(std::count_if(annotations.begin(), annotations.end(),
                                                [](const Annotation& a) { return !a.label.has_value(); }));
}

Usage AnnotationSet::total_usage() const {
  Usage total;
  for (const auto& a : annotations) total += a.usage;
  return total;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ChatRequest build_label_request(const PromptSpec& prompt, const TextRecord& record, const AnnotationPolicy& policy,
                                int attempt) {
  std::string instruction = prompt.instruction;
  if (attempt > 0) instruction += "\n" + policy.corrective_suffix;

  ChatRequest request;
  request.model = policy.model;
  request.temperature = policy.label_temperature;
  request.max_output_tokens = policy.max_output_tokens;
  request.variant = static_cast<std::uint32_t>(attempt);
  if (policy.system_message) request.messages.push_back({Role::System, *policy.system_message});
  request.messages.push_back({Role::User, instruction + "\n\n" + record.text});
  return request;
}

Annotation label_record(const PromptSpec& prompt, const TextRecord& record, const LabelSchema& schema,
                        const AnnotationPolicy& policy, ChatProvider& provider) {
  Annotation out;
  out.record_id = record.id;
  for (int attempt = 0; attempt <= policy.max_parse_retries; ++attempt) {
    ChatResponse reply = provider.complete(build_label_request(prompt, record, policy, attempt));
    out.usage += reply.usage;
    out.label = normalize_label(reply.content, schema, prompt.extraction);
    out.attempts.push_back(std::move(reply.content));
    if (out.label) break;
  }
  return out;
}

AnnotationSet label_dataset(const PromptSpec& prompt, const Dataset& dataset, const LabelSchema& schema,
                            const AnnotationPolicy& policy, ChatProvider& provider, const ProgressSink& progress,
                            std::stop_token stop) {
  validate(policy);
  if (dataset.records.empty()) throw InvalidArgument("cannot label an empty dataset");

  AnnotationSet result;
  result.prompt_id = prompt.id;
  result.provenance = dataset.provenance;
  result.started_at = utc_timestamp();

  const std::size_t total = dataset.records.size();
  std::vector<Annotation> slots(total);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex mu;  // guards done, failure and progress delivery
  std::size_t done = 0;
  std::exception_ptr failure;

  auto fail = [&](std::exception_ptr e) {
    std::lock_guard lock(mu);
    if (!failure) failure = e;
    abort = true;
  };

  auto worker = [&] {
    while (!abort) {
      if (stop.stop_requested()) {
        fail(std::make_exception_ptr(Cancelled()));
        return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= total) return;
      const TextRecord& record = dataset.records[i];
      try {
        slots[i] = label_record(prompt, record, schema, policy, provider);
      } catch (const AuthError&) {
        fail(std::current_exception());
        return;
      } catch (const ScriptMiss&) {
        fail(std::current_exception());
        return;
      } catch (const ProviderError& e) {
        if (policy.fail_fast) {
          fail(std::current_exception());
          return;
        }
        slots[i] = Annotation{record.id, {}, std::nullopt, {}, std::string(e.what())};
      } catch (...) {
        fail(std::current_exception());
        return;
      }
      std::lock_guard lock(mu);
      ++done;
      if (progress) progress(done, total);
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(policy.parallelism), total);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  result.annotations = std::move(slots);
  result.finished_at = utc_timestamp();
  return result;
}

}  // namespace promptforge
