#pragma once

// Report set written by emit_report:
//
//   report.json         full EvalReport (schema below)
//   next_frame.csv      method,trait,mean,sd,n   pooled next-frame error, one row per method
//   trait_accuracy.csv  method,trait,mean,sd,n   pooled accuracy, one row per method and trait
//   summary.txt         tables per section with significance stars (* p < 0.05, ** p < 0.01)
//
// report.json: {"schema", "code_version", "master_seed", "config_hash", "config",
//   "repeats": [{index, seed, complete, error, n_train, n_eval, n_test, audit}],
//   "metrics": [{repeat, section, task, method, trait, value, n}],
//   "aggregates": [{section, task, method, trait, mean, sd, n, single_sample}],
//   "comparisons": [{section, task, trait, method_a, method_b, t, p, df, note}]}
// Comparisons test method_a - method_b per repeat; t, p and df are null when
// the note reports a degenerate statistic.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfembed/eval/audit.hpp"
#include "nfembed/eval/stats.hpp"

namespace nfembed {

inline constexpr std::string_view kNextFrameTask = "next_frame";
inline constexpr std::string_view kTraitTask = "trait_accuracy";
inline constexpr std::string_view kPooled = "pooled";
inline constexpr int kReportSchema = 1;

struct MetricEntry {
  std::size_t repeat = 0;
  std::string section;
  std::string task;
  std::string method;
  std::string trait;  // trait name, or "next_frame"
  double value = 0.0;
  std::size_t n = 0;  // test subjects behind the value
  friend bool operator==(const MetricEntry&, const MetricEntry&) = default;
};

struct AggregateEntry {
  std::string section;
  std::string task;
  std::string method;
  std::string trait;
  Summary summary;
  friend bool operator==(const AggregateEntry&, const AggregateEntry&) = default;
};

struct ComparisonEntry {
  std::string section;
  std::string task;
  std::string trait;
  std::string method_a;
  std::string method_b;
  std::optional<TTestResult> test;
  std::string note;
  friend bool operator==(const ComparisonEntry& a, const ComparisonEntry& b);
};

struct RepeatRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool complete = false;
  std::string error;  // "<stage>: <message>" for an aborted repeat
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  std::size_t n_test = 0;
  AuditSummary audit;
  friend bool operator==(const RepeatRecord&, const RepeatRecord&) = default;
};

struct EvalReport {
  std::string code_version;
  std::uint64_t master_seed = 0;
  std::string config_hash;
  nlohmann::json config;
  std::vector<RepeatRecord> repeats;
  std::vector<MetricEntry> metrics;
  std::vector<AggregateEntry> aggregates;
  std::vector<ComparisonEntry> comparisons;

  bool complete() const;
  /// Throws LookupError when absent.
  const AggregateEntry& aggregate(std::string_view section, std::string_view task, std::string_view method,
                                  std::string_view trait) const;
  const ComparisonEntry* comparison(std::string_view section, std::string_view task, std::string_view trait,
                                    std::string_view a, std::string_view b) const;
  /// Per-repeat values of one cell in repeat order.
  std::vector<double> values(std::string_view section, std::string_view task, std::string_view method,
                             std::string_view trait) const;

  nlohmann::json to_json() const;
  /// Throws FormatError on a malformed document.
  static EvalReport from_json(const nlohmann::json& j);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Fills aggregates and comparisons from the per-repeat metrics of complete
/// repeats. Next-frame methods are compared pairwise; on traits, the
/// embedding classifier is compared against every other method.
void summarize(EvalReport& report);

enum ReportFormat : unsigned { kReportJson = 1, kReportCsv = 2, kReportText = 4, kReportAll = 7 };

std::string report_csv(const EvalReport& report, std::string_view task);
std::string report_text(const EvalReport& report);

/// Writes the selected files into `dir` (created if needed). Throws IoError.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir,
                                               unsigned formats = kReportAll);
/// Reads report.json from a file or directory. Throws IoError or FormatError.
EvalReport load_report(const std::filesystem::path& path);

}  // namespace nfembed
