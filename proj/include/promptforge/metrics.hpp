#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "promptforge/annotator.hpp"
#include "promptforge/domain.hpp"

namespace promptforge {

struct ClassCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Per-class counts aligned with `classes`, plus the Unparsed sentinel class
/// which only ever receives false positives.
struct ConfusionCounts {
  std::vector<std::string> classes;
  std::vector<ClassCounts> per_class;
  ClassCounts unparsed;
  std::int64_t n = 0;

  const ClassCounts& at(std::string_view label) const;
  std::int64_t total_tp() const;
  std::int64_t total_fp() const;  // includes the sentinel
  std::int64_t total_fn() const;

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct EvalReport {
  std::string prompt_id;
  double micro_f1 = 0.0;
  double accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::int64_t n = 0;
  ConfusionCounts counts;
  std::int64_t unparsed_count = 0;
  std::vector<std::string> record_ids;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Accumulates predicted vs gold per record. `predicted` and `gold` align.
ConfusionCounts confusion(const std::vector<std::string>& classes, const std::vector<Label>& predicted,
                          const std::vector<std::string>& gold);

/// Throws MissingGold when a record lacks gold, InvalidArgument on misalignment.
ConfusionCounts confusion(const AnnotationSet& annotations, const Dataset& dataset);

/// 2*TP / (2*TP + FP + FN) with sums over every class and the sentinel.
double micro_f1(const ConfusionCounts& counts);

/// Normal-approximation interval p +/- z*sqrt(p(1-p)/n), clamped to [0, 1].
std::pair<double, double> wald_ci(double p, std::int64_t n, double z = 1.96);

/// Percentile bootstrap interval of accuracy over per-record correctness.
std::pair<double, double> bootstrap_ci(const std::vector<bool>& correct, int resamples = 1000,
                                       std::uint64_t seed = 0, double level = 0.95);

enum class CiMethod { Wald, Bootstrap };

/// Builds the report for an already-labelled dataset.
EvalReport score(const AnnotationSet& annotations, const Dataset& dataset, CiMethod method = CiMethod::Wald,
                 std::uint64_t bootstrap_seed = 0);

/// label_dataset followed by score.
EvalReport evaluate(const PromptSpec& prompt, const Dataset& labelled, const LabelSchema& schema,
                    const AnnotationPolicy& policy, ChatProvider& provider, const ProgressSink& progress = {},
                    std::stop_token stop = {});

/// "57.0 [55.2, 58.8]" with one decimal.
std::string format_score(const EvalReport& report);
std::string format_percent(double fraction);

}  // namespace promptforge
