#include "promptforge/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "promptforge/errors.hpp"
#include "promptforge/json_io.hpp"
#include "promptforge/random.hpp"

namespace promptforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kAnnotationFormat = "promptforge.annotations";
constexpr std::string_view kRunLogFormat = "promptforge.runlog";

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  return lines;
}

bool blank(std::string_view s) { return text::trim(s).empty(); }

std::string rows_list(const std::vector<std::size_t>& rows) {
  std::vector<std::string> parts;
  for (std::size_t r : rows) parts.push_back(std::to_string(r));
  return text::join(parts, ", ");
}

struct RawRecord {
  std::size_t row = 0;  // 1-based data row
  std::optional<std::string> id;
  std::string text;
  std::optional<std::string> label;
};

std::vector<RawRecord> raw_from_csv(std::string_view content, const ColumnMapping& mapping) {
  std::vector<CsvRow> rows = parse_csv(content);
  std::vector<std::string> header;
  std::size_t first = 0;
  if (mapping.has_header) {
    if (rows.empty()) throw ParseError("csv has no header row");
    header = rows.front();
    if (!header.empty()) header.front() = text::trim(header.front());
    for (auto& h : header) h = text::trim(h);
    first = 1;
  } else {
    const std::size_t width = rows.empty() ? 0 : rows.front().size();
    for (std::size_t i = 0; i < width; ++i) header.push_back(std::to_string(i + 1));
  }

  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ParseError("column '" + name + "' not found (available: " + text::join(header, ", ") + ")");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t text_col = column(mapping.text_column);
  const std::optional<std::size_t> label_col =
      mapping.label_column ? std::optional(column(*mapping.label_column)) : std::nullopt;
  const std::optional<std::size_t> id_col = mapping.id_column ? std::optional(column(*mapping.id_column)) : std::nullopt;

  std::vector<RawRecord> out;
  for (std::size_t i = first; i < rows.size(); ++i) {
    const std::size_t row_number = i - first + 1;
    const CsvRow& row = rows[i];
    if (row.size() != header.size()) {
      throw ParseError("row " + std::to_string(row_number) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(row.size()));
    }
    RawRecord r;
    r.row = row_number;
    r.text = row[text_col];
    if (label_col && !blank(row[*label_col])) r.label = row[*label_col];
    if (id_col) r.id = text::trim(row[*id_col]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRecord> raw_from_jsonl(std::string_view content, const ColumnMapping& mapping) {
  std::vector<RawRecord> out;
  std::size_t row_number = 0;
  for (std::string_view line : split_lines(content)) {
    if (blank(line)) continue;
    ++row_number;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ParseError("row " + std::to_string(row_number) + ": not a JSON object");
    }
    auto field = [&](const std::string& name, bool required) -> std::optional<std::string> {
      auto it = doc.find(name);
      if (it == doc.end() || it->is_null()) {
        if (required) throw ParseError("row " + std::to_string(row_number) + ": missing field '" + name + "'");
        return std::nullopt;
      }
      if (it->is_string()) return it->get<std::string>();
      if (name != mapping.text_column && it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
      throw ParseError("row " + std::to_string(row_number) + ", column '" + name + "': expected a string");
    };
    RawRecord r;
    r.row = row_number;
    r.text = *field(mapping.text_column, true);
    if (mapping.label_column) {
      auto label = field(*mapping.label_column, false);
      if (label && !blank(*label)) r.label = std::move(label);
    }
    if (mapping.id_column) {
      auto id = field(*mapping.id_column, true);
      r.id = text::trim(*id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void validate_mapping(const ColumnMapping& m) {
  if (m.text_column.empty()) throw InvalidArgument("text column name is empty");
  std::set<std::string> names{m.text_column};
  if (m.label_column && !names.insert(*m.label_column).second) throw InvalidArgument("column names must be distinct");
  if (m.id_column && !names.insert(*m.id_column).second) throw InvalidArgument("column names must be distinct");
}

json annotation_header(const AnnotationSet& set) {
  return json{{"format", kAnnotationFormat},
              {"version", kAnnotationFormatVersion},
              {"prompt_id", set.prompt_id},
              {"provenance", set.provenance},
              {"started_at", set.started_at},
              {"finished_at", set.finished_at},
              {"count", set.annotations.size()}};
}

}  // namespace

// --- csv -------------------------------------------------------------------

std::vector<CsvRow> parse_csv(std::string_view content) {
  if (content.substr(0, 3) == "\xEF\xBB\xBF") content.remove_prefix(3);
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  bool row_started = false;
  std::size_t line = 1;
  std::size_t quote_line = 0;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_quoted = false;
  };
  auto end_row = [&] {
    end_field();
    const bool empty_line = row.size() == 1 && row.front().empty() && !row_started;
    if (!empty_line) rows.push_back(std::move(row));
    row.clear();
    row_started = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_quoted) {
          throw ParseError("line " + std::to_string(line) + ": unexpected quote after closing quote");
        }
        if (!field.empty()) {
          field.push_back(c);  // literal quote inside an unquoted field
          break;
        }
        in_quotes = true;
        field_quoted = true;
        row_started = true;
        quote_line = line;
        break;
      case ',':
        end_field();
        row_started = true;
        break;
      case '\r':
        if (i + 1 < content.size() && content[i + 1] == '\n') break;
        field.push_back(c);
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        if (field_quoted) {
          throw ParseError("line " + std::to_string(line) + ": unexpected character after closing quote");
        }
        field.push_back(c);
        row_started = true;
    }
  }
  if (in_quotes) throw ParseError("line " + std::to_string(quote_line) + ": unterminated quoted field");
  if (row_started || !field.empty()) end_row();
  return rows;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_csv_row(const CsvRow& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i > 0) out.push_back(',');
    out += csv_escape(row[i]);
  }
  // A lone empty field would read back as a blank line.
  if (row.size() == 1 && row.front().empty()) out = "\"\"";
  out.push_back('\n');
  return out;
}

// --- datasets --------------------------------------------------------------

DataFormat parse_data_format(std::string_view value) {
  const std::string v = text::ascii_lower(value);
  if (v == "csv") return DataFormat::Csv;
  if (v == "jsonl" || v == "ndjson" || v == "json-lines") return DataFormat::Jsonl;
  throw InvalidArgument("unknown data format '" + std::string(value) + "' (expected csv or jsonl)");
}

DataFormat guess_data_format(const fs::path& path) {
  const std::string ext = text::ascii_lower(path.extension().string());
  return (ext == ".jsonl" || ext == ".ndjson") ? DataFormat::Jsonl : DataFormat::Csv;
}

Dataset parse_dataset(std::string_view content, DataFormat format, const ColumnMapping& mapping,
                      const LabelSchema& schema, std::string provenance) {
  validate_mapping(mapping);
  require_valid_schema(schema);
  std::vector<RawRecord> raw =
      format == DataFormat::Csv ? raw_from_csv(content, mapping) : raw_from_jsonl(content, mapping);
  if (raw.empty()) throw ParseError("dataset has no records");

  Dataset dataset;
  dataset.schema = schema;
  dataset.provenance = std::move(provenance);
  std::vector<std::size_t> empty_rows;
  std::vector<std::string> unknown;
  std::set<std::string> seen_ids;
  for (auto& r : raw) {
    if (blank(r.text)) {
      empty_rows.push_back(r.row);
      continue;
    }
    TextRecord record;
    record.id = r.id ? *r.id : std::to_string(r.row);
    if (record.id.empty()) throw ParseError("row " + std::to_string(r.row) + ": empty id");
    if (!seen_ids.insert(record.id).second) {
      throw ParseError("row " + std::to_string(r.row) + ": duplicate id '" + record.id + "'");
    }
    record.text = std::move(r.text);
    if (r.label) {
      record.gold = normalize_label(*r.label, schema, ExtractionMode::WholeAnswer);
      if (!record.gold) unknown.push_back("row " + std::to_string(r.row) + ": '" + *r.label + "'");
    }
    dataset.records.push_back(std::move(record));
  }
  if (!empty_rows.empty()) throw ParseError("empty text in rows " + rows_list(empty_rows));
  if (!unknown.empty()) {
    throw UnknownLabel("labels outside the schema (" + text::join(schema.labels, ", ") + "): " +
                       text::join(unknown, "; "));
  }
  return dataset;
}

Dataset load_dataset(const fs::path& path, DataFormat format, const ColumnMapping& mapping,
                     const LabelSchema& schema) {
  return parse_dataset(read_file(path), format, mapping, schema, path.filename().string());
}

std::string format_dataset(const Dataset& dataset, DataFormat format) {
  std::string out;
  if (format == DataFormat::Csv) {
    out += format_csv_row({"id", "text", "label"});
    for (const auto& r : dataset.records) out += format_csv_row({r.id, r.text, r.gold.value_or("")});
  } else {
    for (const auto& r : dataset.records) {
      out += json{{"id", r.id}, {"text", r.text}, {"label", r.gold ? json(*r.gold) : json(nullptr)}}.dump() + "\n";
    }
  }
  return out;
}

void save_dataset(const Dataset& dataset, const fs::path& path, DataFormat format) {
  write_file(path, format_dataset(dataset, format));
}

std::string format_labelled_csv(const Dataset& dataset, const AnnotationSet& annotations) {
  if (annotations.annotations.size() != dataset.records.size()) {
    throw InvalidArgument("annotation set does not match the dataset");
  }
  std::string out = format_csv_row({"id", "text", "label", "gold"});
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    out += format_csv_row({r.id, r.text, annotations.annotations[i].label.value_or(""), r.gold.value_or("")});
  }
  return out;
}

// --- split -----------------------------------------------------------------

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
  const std::size_t n = dataset.records.size();
  if (n < 2) throw InvalidArgument("split needs at least 2 records");

  std::size_t target = 0;
  if (std::holds_alternative<double>(spec.size)) {
    const double fraction = std::get<double>(spec.size);
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("split fraction must be within (0, 1)");
    target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  } else {
    const std::int64_t count = std::get<std::int64_t>(spec.size);
    if (count < 1 || static_cast<std::size_t>(count) >= n) {
      throw InvalidArgument("split count must be within [1, " + std::to_string(n - 1) + "]");
    }
    target = static_cast<std::size_t>(count);
  }
  if (target == 0 || target >= n) throw InvalidArgument("split would leave one part empty");

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> chosen;
  if (!spec.stratify) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    stable_shuffle(order, rng);
    chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target));
  } else {
    std::map<std::string, std::vector<std::size_t>> groups;
    std::vector<std::string> group_order;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& gold = dataset.records[i].gold;
      if (!gold) throw StratifyWithoutGold("stratified split needs a gold label on every record");
      if (groups.find(*gold) == groups.end()) group_order.push_back(*gold);
      groups[*gold].push_back(i);
    }
    // Largest-remainder apportionment keeps each class within one record of
    // its exact share while hitting the target total.
    std::vector<std::size_t> quota(group_order.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < group_order.size(); ++g) {
      const double exact =
          static_cast<double>(groups[group_order[g]].size()) * static_cast<double>(target) / static_cast<double>(n);
      quota[g] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[g];
      remainders.emplace_back(exact - std::floor(exact), g);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < target && k < remainders.size(); ++k, ++assigned) {
      quota[remainders[k].second] += 1;
    }
    for (std::size_t g = 0; g < group_order.size(); ++g) {
      std::vector<std::size_t> members = groups[group_order[g]];
      stable_shuffle(members, rng);
      chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[g]));
    }
  }

  std::vector<bool> in_a(n, false);
  for (std::size_t i : chosen) in_a[i] = true;
  Dataset a{dataset.schema, {}, dataset.provenance + " [split A]"};
  Dataset b{dataset.schema, {}, dataset.provenance + " [split B]"};
  for (std::size_t i = 0; i < n; ++i) (in_a[i] ? a : b).records.push_back(dataset.records[i]);
  return {std::move(a), std::move(b)};
}

// --- annotations -----------------------------------------------------------

std::string format_annotations(const AnnotationSet& set) {
  if (set.annotations.empty()) throw InvalidArgument("refusing to save an empty annotation set");
  std::string out = annotation_header(set).dump() + "\n";
  for (const auto& a : set.annotations) out += json(a).dump() + "\n";
  return out;
}

AnnotationSet parse_annotations(std::string_view content) {
  std::vector<std::string_view> lines;
  for (auto line : split_lines(content)) {
    if (!blank(line)) lines.push_back(line);
  }
  if (lines.empty()) throw ParseError("annotation file is empty");
  json header = json::parse(lines.front(), nullptr, false);
  if (header.is_discarded() || !header.is_object() || header.value("format", "") != kAnnotationFormat) {
    throw ParseError("not an annotation file (missing header line)");
  }
  const int version = header.value("version", -1);
  if (version != kAnnotationFormatVersion) {
    throw VersionError("unsupported annotation file version " + std::to_string(version) + " (expected " +
                       std::to_string(kAnnotationFormatVersion) + ")");
  }
  AnnotationSet set;
  set.prompt_id = header.value("prompt_id", "");
  set.provenance = header.value("provenance", "");
  set.started_at = header.value("started_at", "");
  set.finished_at = header.value("finished_at", "");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    json doc = json::parse(lines[i], nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ParseError("annotation line " + std::to_string(i + 1) + " is not JSON");
    try {
      set.annotations.push_back(doc.get<Annotation>());
    } catch (const json::exception& e) {
      throw ParseError("annotation line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  const std::size_t expected = header.value("count", set.annotations.size());
  if (expected != set.annotations.size()) {
    throw ParseError("annotation file declares " + std::to_string(expected) + " entries but holds " +
                     std::to_string(set.annotations.size()));
  }
  return set;
}

void save_annotations(const AnnotationSet& set, const fs::path& path) { write_file(path, format_annotations(set)); }

AnnotationSet load_annotations(const fs::path& path) { return parse_annotations(read_file(path)); }

// --- run log ---------------------------------------------------------------

RunLogWriter::RunLogWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw DataError("cannot open run log " + path.string() + " for writing");
}

void RunLogWriter::write_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw DataError("failed writing run log " + path_.string());
}

void RunLogWriter::write_header(const OptRun& run) {
  run_id_ = run.run_id;
  write_line(json{{"type", "header"},
                  {"format", kRunLogFormat},
                  {"version", kRunLogVersion},
                  {"run_id", run.run_id},
                  {"config", run.config},
                  {"seed", run.seed},
                  {"fitness_subset_ids", run.fitness_subset_ids}}
                 .dump());
}

void RunLogWriter::write_generation(const std::string& run_id, int generation, const std::vector<ScoredPrompt>& scored) {
  for (const auto& s : scored) {
    write_line(json{{"type", "prompt"},
                    {"run_id", run_id},
                    {"generation", generation},
                    {"prompt_id", s.prompt.id},
                    {"parent_id", s.prompt.parent_id ? json(*s.prompt.parent_id) : json(nullptr)},
                    {"instruction", s.prompt.instruction},
                    {"score", s.score},
                    {"eval_errors", s.eval_errors},
                    {"extraction", to_string(s.prompt.extraction)},
                    {"origin", to_string(s.prompt.origin)}}
                   .dump());
  }
}

void RunLogWriter::write_final(const OptRun& run) {
  write_line(json{{"type", "final"},
                  {"run_id", run.run_id},
                  {"best_prompt_id", run.best.prompt.id},
                  {"best_instruction", run.best.prompt.instruction},
                  {"best_score", run.best.score},
                  {"report", run.final_report}}
                 .dump());
}

RunObserver RunLogWriter::observer() {
  RunObserver obs;
  obs.on_start = [this](const OptRun& run) { write_header(run); };
  obs.on_generation = [this](int generation, const std::vector<ScoredPrompt>& scored, const std::vector<LineageEdge>&) {
    write_generation(run_id_, generation, scored);
  };
  obs.on_finish = [this](const OptRun& run) { write_final(run); };
  return obs;
}

RunLog parse_run_log(std::string_view content) {
  const bool complete_tail = content.empty() || content.back() == '\n';
  std::vector<std::string_view> lines;
  for (auto line : split_lines(content)) {
    if (!blank(line)) lines.push_back(line);
  }
  if (lines.empty()) throw ParseError("run log is empty");

  RunLog log;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json doc = json::parse(lines[i], nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      // A torn final line from an interrupted writer is ignored.
      if (i + 1 == lines.size() && !complete_tail) break;
      throw ParseError("run log line " + std::to_string(i + 1) + " is not JSON");
    }
    const std::string type = doc.value("type", "");
    try {
      if (i == 0) {
        if (type != "header" || doc.value("format", "") != kRunLogFormat) {
          throw ParseError("run log does not start with a header line");
        }
        log.version = doc.value("version", -1);
        if (log.version != kRunLogVersion) {
          throw VersionError("unsupported run log version " + std::to_string(log.version));
        }
        log.run_id = doc.at("run_id").get<std::string>();
        log.config = doc.at("config").get<OptimizerConfig>();
        log.fitness_subset_ids = doc.at("fitness_subset_ids").get<std::vector<std::string>>();
      } else if (type == "prompt") {
        RunLogEntry e;
        e.run_id = doc.at("run_id").get<std::string>();
        e.generation = doc.at("generation").get<int>();
        e.prompt_id = doc.at("prompt_id").get<std::string>();
        if (doc.contains("parent_id") && doc["parent_id"].is_string()) e.parent_id = doc["parent_id"].get<std::string>();
        e.instruction = doc.at("instruction").get<std::string>();
        e.score = doc.at("score").get<double>();
        e.eval_errors = doc.at("eval_errors").get<std::int64_t>();
        e.extraction = parse_extraction_mode(doc.value("extraction", "whole-answer"));
        e.origin = parse_prompt_origin(doc.value("origin", "seed"));
        log.entries.push_back(std::move(e));
      } else if (type == "final") {
        RunLogFinal f;
        f.best_prompt_id = doc.at("best_prompt_id").get<std::string>();
        f.best_instruction = doc.at("best_instruction").get<std::string>();
        f.best_score = doc.at("best_score").get<double>();
        f.report = doc.at("report").get<EvalReport>();
        log.final = std::move(f);
      } else {
        throw ParseError("run log line " + std::to_string(i + 1) + " has unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError("run log line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return log;
}

RunLog read_run_log(const fs::path& path) { return parse_run_log(read_file(path)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace promptforge
