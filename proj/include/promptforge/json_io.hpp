#pragma once

// nlohmann/json conversions for the toolkit's value types.

#include "json.hpp"
#include "promptforge/annotator.hpp"
#include "promptforge/domain.hpp"
#include "promptforge/metrics.hpp"
#include "promptforge/optimizer.hpp"

namespace promptforge {

void to_json(nlohmann::json& j, const LabelSchema& schema);
void from_json(const nlohmann::json& j, LabelSchema& schema);

void to_json(nlohmann::json& j, const PromptSpec& prompt);
void from_json(const nlohmann::json& j, PromptSpec& prompt);

void to_json(nlohmann::json& j, const Usage& usage);
void from_json(const nlohmann::json& j, Usage& usage);

void to_json(nlohmann::json& j, const Annotation& annotation);
void from_json(const nlohmann::json& j, Annotation& annotation);

void to_json(nlohmann::json& j, const ConfusionCounts& counts);
void from_json(const nlohmann::json& j, ConfusionCounts& counts);

void to_json(nlohmann::json& j, const EvalReport& report);
void from_json(const nlohmann::json& j, EvalReport& report);

void to_json(nlohmann::json& j, const OptimizerConfig& config);
void from_json(const nlohmann::json& j, OptimizerConfig& config);

void to_json(nlohmann::json& j, const ScoredPrompt& scored);
void to_json(nlohmann::json& j, const LineageEdge& edge);

void to_json(nlohmann::json& j, const AnnotationPolicy& policy);
/// Applies the fields present in `j` on top of `policy`.
void merge_policy(const nlohmann::json& j, AnnotationPolicy& policy);
void merge_optimizer_config(const nlohmann::json& j, OptimizerConfig& config);

/// OptRun without per-generation detail: best prompt, scores, final report.
nlohmann::json run_summary(const OptRun& run);

}  // namespace promptforge
