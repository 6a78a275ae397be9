#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "promptforge/annotator.hpp"
#include "promptforge/domain.hpp"
#include "promptforge/metrics.hpp"
#include "promptforge/optimizer.hpp"

namespace promptforge {

// ---------------------------------------------------------------------------
// CSV: comma delimiter, double-quote quoting, quotes escaped by doubling.

using CsvRow = std::vector<std::string>;

/// Parses RFC 4180 style text. Accepts LF or CRLF row ends and a UTF-8 BOM.
/// Throws ParseError (with the 1-based line) on an unterminated quote.
std::vector<CsvRow> parse_csv(std::string_view content);

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string csv_escape(std::string_view field);
std::string format_csv_row(const CsvRow& row);

// ---------------------------------------------------------------------------
// Datasets

enum class DataFormat { Csv, Jsonl };

DataFormat parse_data_format(std::string_view text);
/// ".jsonl"/".ndjson" map to Jsonl, everything else to Csv.
DataFormat guess_data_format(const std::filesystem::path& path);

struct ColumnMapping {
  std::string text_column = "text";
  std::optional<std::string> label_column;
  std::optional<std::string> id_column;
  bool has_header = true;  // csv only; without a header columns are "1", "2", ...
};

/// Parses dataset content in file order. Gold labels go through
/// normalize_label(WholeAnswer); empty label cells mean "unlabelled".
Dataset parse_dataset(std::string_view content, DataFormat format, const ColumnMapping& mapping,
                      const LabelSchema& schema, std::string provenance = {});

Dataset load_dataset(const std::filesystem::path& path, DataFormat format, const ColumnMapping& mapping,
                     const LabelSchema& schema);

/// Writes id,text,label (label empty when absent). Reload with
/// ColumnMapping{"text", "label", "id"}.
std::string format_dataset(const Dataset& dataset, DataFormat format);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path, DataFormat format);

/// Dataset plus predictions as csv: id,text,label(=predicted),gold.
std::string format_labelled_csv(const Dataset& dataset, const AnnotationSet& annotations);

// ---------------------------------------------------------------------------
// Split

struct SplitSpec {
  std::variant<double, std::int64_t> size = 0.5;  // fraction in (0,1) or count of part A
  std::uint64_t seed = 0;
  bool stratify = false;
};

/// Disjoint, exhaustive, deterministic partition; part A has the requested
/// size. Relative order is preserved within each part.
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Annotation sets (line-delimited JSON with a versioned header line)

inline constexpr int kAnnotationFormatVersion = 1;

std::string format_annotations(const AnnotationSet& set);
AnnotationSet parse_annotations(std::string_view content);
void save_annotations(const AnnotationSet& set, const std::filesystem::path& path);
AnnotationSet load_annotations(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Optimizer run log

inline constexpr int kRunLogVersion = 1;

struct RunLogEntry {
  std::string run_id;
  int generation = 0;
  std::string prompt_id;
  std::optional<std::string> parent_id;
  std::string instruction;
  double score = 0.0;
  std::int64_t eval_errors = 0;
  ExtractionMode extraction = ExtractionMode::WholeAnswer;
  PromptOrigin origin = PromptOrigin::Seed;
};

struct RunLogFinal {
  std::string best_prompt_id;
  std::string best_instruction;
  double best_score = 0.0;
  EvalReport report;
};

struct RunLog {
  int version = kRunLogVersion;
  std::string run_id;
  OptimizerConfig config;
  std::vector<std::string> fitness_subset_ids;
  std::vector<RunLogEntry> entries;
  std::optional<RunLogFinal> final;
};

/// Single-owner writer; every call ends with a flush so partial runs stay
/// readable.
class RunLogWriter {
 public:
  explicit RunLogWriter(const std::filesystem::path& path);

  void write_header(const OptRun& run);
  void write_generation(const std::string& run_id, int generation, const std::vector<ScoredPrompt>& scored);
  void write_final(const OptRun& run);

  /// Observer that streams a run_apo call into this writer.
  RunObserver observer();

 private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  std::ofstream out_;
  std::string run_id_;
};

RunLog parse_run_log(std::string_view content);
RunLog read_run_log(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace promptforge
