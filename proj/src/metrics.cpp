#include "promptforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "promptforge/errors.hpp"
#include "promptforge/random.hpp"

namespace promptforge {

namespace {

std::size_t class_index(const std::vector<std::string>& classes, std::string_view label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw InvalidArgument("label '" + std::string(label) + "' is not in the schema");
  return static_cast<std::size_t>(it - classes.begin());
}

}  // namespace

const ClassCounts& ConfusionCounts::at(std::string_view label) const {
  return per_class.at(class_index(classes, label));
}

std::int64_t ConfusionCounts::total_tp() const {
  std::int64_t s = unparsed.tp;
  for (const auto& c : per_class) s += c.tp;
  return s;
}

std::int64_t ConfusionCounts::total_fp() const {
  std::int64_t s = unparsed.fp;
  for (const auto& c : per_class) s += c.fp;
  return s;
}

std::int64_t ConfusionCounts::total_fn() const {
  std::int64_t s = unparsed.fn;
  for (const auto& c : per_class) s += c.fn;
  return s;
}

ConfusionCounts confusion(const std::vector<std::string>& classes, const std::vector<Label>& predicted,
                          const std::vector<std::string>& gold) {
  if (predicted.size() != gold.size()) throw InvalidArgument("predictions and gold labels differ in length");
  ConfusionCounts counts;
  counts.classes = classes;
  counts.per_class.assign(classes.size(), ClassCounts{});
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t g = class_index(classes, gold[i]);
    if (!predicted[i]) {
      counts.unparsed.fp += 1;
      counts.per_class[g].fn += 1;
    } else {
      const std::size_t p = class_index(classes, *predicted[i]);
      if (p == g) {
        counts.per_class[g].tp += 1;
      } else {
        counts.per_class[p].fp += 1;
        counts.per_class[g].fn += 1;
      }
    }
    counts.n += 1;
  }
  return counts;
}

ConfusionCounts confusion(const AnnotationSet& annotations, const Dataset& dataset) {
  if (annotations.annotations.size() != dataset.records.size()) {
    throw InvalidArgument("annotation set has " + std::to_string(annotations.annotations.size()) +
                          " entries for a dataset of " + std::to_string(dataset.records.size()));
  }
  std::vector<Label> predicted;
  std::vector<std::string> gold;
  predicted.reserve(dataset.records.size());
  gold.reserve(dataset.records.size());
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const TextRecord& record = dataset.records[i];
    if (annotations.annotations[i].record_id != record.id) {
      throw InvalidArgument("annotation " + std::to_string(i) + " is for record '" +
                            annotations.annotations[i].record_id + "', expected '" + record.id + "'");
    }
    if (!record.gold) throw MissingGold("gold labels required: record '" + record.id + "' has none");
    gold.push_back(*record.gold);
    predicted.push_back(annotations.annotations[i].label);
  }
  return confusion(dataset.schema.labels, predicted, gold);
}

double micro_f1(const ConfusionCounts& counts) {
  if (counts.n < 1) throw InvalidArgument("micro_f1 needs at least one evaluated record");
  const double tp = static_cast<double>(counts.total_tp());
  const double denom = 2.0 * tp + static_cast<double>(counts.total_fp() + counts.total_fn());
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

std::pair<double, double> wald_ci(double p, std::int64_t n, double z) {
  if (n < 1) throw InvalidArgument("wald_ci needs n >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("wald_ci needs p within [0, 1]");
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {std::clamp(p - half, 0.0, 1.0), std::clamp(p + half, 0.0, 1.0)};
}

std::pair<double, double> bootstrap_ci(const std::vector<bool>& correct, int resamples, std::uint64_t seed,
                                       double level) {
  if (correct.empty()) throw InvalidArgument("bootstrap_ci needs at least one record");
  if (resamples < 1) throw InvalidArgument("bootstrap_ci needs resamples >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t n = correct.size();
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += correct[uniform_index(rng, n)] ? 1 : 0;
    stats.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  const auto last = static_cast<double>(stats.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(alpha / 2.0 * last));
  const auto hi = static_cast<std::size_t>(std::ceil((1.0 - alpha / 2.0) * last));
  return {stats[lo], stats[std::min(hi, stats.size() - 1)]};
}

EvalReport score(const AnnotationSet& annotations, const Dataset& dataset, CiMethod method,
                 std::uint64_t bootstrap_seed) {
  EvalReport report;
  report.prompt_id = annotations.prompt_id;
  report.counts = confusion(annotations, dataset);
  report.n = report.counts.n;
  report.micro_f1 = micro_f1(report.counts);
  report.accuracy = static_cast<double>(report.counts.total_tp()) / static_cast<double>(report.n);
  report.unparsed_count = static_cast<std::int64_t>(annotations.unparsed_count());
  report.record_ids.reserve(dataset.records.size());
  for (const auto& r : dataset.records) report.record_ids.push_back(r.id);

  if (method == CiMethod::Wald) {
    std::tie(report.ci_low, report.ci_high) = wald_ci(report.micro_f1, report.n);
  } else {
    std::vector<bool> correct;
    correct.reserve(dataset.records.size());
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
      correct.push_back(annotations.annotations[i].label == dataset.records[i].gold);
    }
    auto [lo, hi] = bootstrap_ci(correct, 1000, bootstrap_seed);
    report.ci_low = std::min(lo, report.micro_f1);
    report.ci_high = std::max(hi, report.micro_f1);
  }
  return report;
}

EvalReport evaluate(const PromptSpec& prompt, const Dataset& labelled, const LabelSchema& schema,
                    const AnnotationPolicy& policy, ChatProvider& provider, const ProgressSink& progress,
                    std::stop_token stop) {
  for (const auto& r : labelled.records) {
    if (!r.gold) throw MissingGold("gold labels required: record '" + r.id + "' has none");
  }
  AnnotationSet annotations = label_dataset(prompt, labelled, schema, policy, provider, progress, std::move(stop));
  return score(annotations, labelled);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

std::string format_score(const EvalReport& report) {
  return format_percent(report.micro_f1) + " [" + format_percent(report.ci_low) + ", " +
         format_percent(report.ci_high) + "]";
}

}  // namespace promptforge
