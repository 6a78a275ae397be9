#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "promptforge/domain.hpp"
#include "promptforge/providers.hpp"

namespace promptforge {

inline constexpr std::string_view kDefaultCorrectiveSuffix =
    "Remember: output only one of the allowed labels, exactly as written.";

struct AnnotationPolicy {
  std::string model = "gpt-3.5-turbo";
  int max_parse_retries = 3;
  double label_temperature = 0.0;
  int parallelism = 1;
  int max_output_tokens = 256;
  std::string corrective_suffix{kDefaultCorrectiveSuffix};
  std::optional<std::string> system_message;
  // Abort the whole dataset on the first TransportError instead of marking
  // the record Unparsed.
  bool fail_fast = false;
};

void validate(const AnnotationPolicy& policy);

struct Annotation {
  std::string record_id;
  std::vector<std::string> attempts;
  Label label;
  Usage usage;
  std::optional<std::string> error;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct AnnotationSet {
  std::string prompt_id;
  std::string provenance;
  std::vector<Annotation> annotations;
  std::string started_at;
  std::string finished_at;

  std::size_t unparsed_count() const;
  Usage total_usage() const;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Receives (done, total) after each finished record; `done` never decreases.
using ProgressSink = std::function<void(std::size_t done, std::size_t total)>;

/// Single-turn conversation for one record and attempt (0 = first ask).
ChatRequest build_label_request(const PromptSpec& prompt, const TextRecord& record, const AnnotationPolicy& policy,
                                int attempt);

/// Labels one record in a fresh conversation, re-asking with the corrective
/// suffix while the answer does not parse.
Annotation label_record(const PromptSpec& prompt, const TextRecord& record, const LabelSchema& schema,
                        const AnnotationPolicy& policy, ChatProvider& provider);

/// Labels every record with up to `policy.parallelism` in flight. Output order
/// matches dataset order.
AnnotationSet label_dataset(const PromptSpec& prompt, const Dataset& dataset, const LabelSchema& schema,
                            const AnnotationPolicy& policy, ChatProvider& provider, const ProgressSink& progress = {},
                            std::stop_token stop = {});

/// UTC wall-clock time as ISO-8601 with seconds.
std::string utc_timestamp();

}  // namespace promptforge
