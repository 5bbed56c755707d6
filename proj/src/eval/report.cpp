#include "nfembed/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "nfembed/errors.hpp"
#include "nfembed/eval/config.hpp"
#include "nfembed/io/binary.hpp"

namespace nfembed {
namespace {

using nlohmann::json;

bool same_test(const std::optional<TTestResult>& a, const std::optional<TTestResult>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || (a->t == b->t && a->p == b->p && a->df == b->df);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Display order: next-frame methods, then trait methods, then anything else.
int method_rank(std::string_view m) {
  int i = 0;
  for (auto n : kNextFrameMethods) {
    if (n == m) return i;
    ++i;
  }
  for (auto n : kTraitMethods) {
    if (n == m) return i;
    ++i;
  }
  return i;
}

int trait_rank(const std::string& t) {
  for (std::size_t i = 0; i < kAllTraits.size(); ++i)
    if (trait_name(kAllTraits[i]) == t) return static_cast<int>(i);
  return -1;
}

template <class T>
T need(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: field '") + key + "': " + e.what(), 0);
  }
}

}  // namespace

bool operator==(const ComparisonEntry& a, const ComparisonEntry& b) {
  return a.section == b.section && a.task == b.task && a.trait == b.trait && a.method_a == b.method_a &&
         a.method_b == b.method_b && same_test(a.test, b.test) && a.note == b.note;
}

bool EvalReport::complete() const {
  return std::ranges::all_of(repeats, [](const RepeatRecord& r) { return r.complete; });
}

const AggregateEntry& EvalReport::aggregate(std::string_view section, std::string_view task, std::string_view method,
                                            std::string_view trait) const {
  for (const auto& a : aggregates)
    if (a.section == section && a.task == task && a.method == method && a.trait == trait) return a;
  throw LookupError("report has no aggregate for " + std::string(section) + "/" + std::string(task) + "/" +
                    std::string(method) + "/" + std::string(trait));
}

const ComparisonEntry* EvalReport::comparison(std::string_view section, std::string_view task, std::string_view trait,
                                              std::string_view a, std::string_view b) const {
  for (const auto& c : comparisons)
    if (c.section == section && c.task == task && c.trait == trait && c.method_a == a && c.method_b == b) return &c;
  return nullptr;
}

std::vector<double> EvalReport::values(std::string_view section, std::string_view task, std::string_view method,
                                       std::string_view trait) const {
  std::vector<double> out;
  for (const auto& m : metrics)
    if (m.section == section && m.task == task && m.method == method && m.trait == trait) out.push_back(m.value);
  return out;
}

void summarize(EvalReport& report) {
  report.aggregates.clear();
  report.comparisons.clear();
  std::size_t n_train = 0, n_test = 0;
  std::vector<bool> complete(report.repeats.size() + 1, false);
  for (const auto& r : report.repeats) {
    if (r.index < complete.size()) complete[r.index] = r.complete;
    if (r.complete && n_train == 0) {
      n_train = r.n_train;
      n_test = r.n_test;
    }
  }

  using Key = std::tuple<std::string, std::string, std::string, std::string>;  // section, task, trait, method
  std::map<Key, std::map<std::size_t, double>> cells;
  for (const auto& m : report.metrics)
    if (m.repeat < complete.size() && complete[m.repeat])
      cells[{m.section, m.task, m.trait, m.method}][m.repeat] = m.value;

  std::vector<Key> keys;
  for (const auto& [k, _] : cells) keys.push_back(k);
  std::ranges::stable_sort(keys, [](const Key& a, const Key& b) {
    const auto& [sa, ta, ra, ma] = a;
    const auto& [sb, tb, rb, mb] = b;
    const bool pa = sa == kPooled, pb = sb == kPooled;
    if (pa != pb) return pa;
    if (sa != sb) return sa < sb;
    if (ta != tb) return ta == kNextFrameTask;
    if (ra != rb) return trait_rank(ra) < trait_rank(rb);
    return method_rank(ma) < method_rank(mb);
  });
  for (const auto& k : keys) {
    const auto& [section, task, trait, method] = k;
    std::vector<double> v;
    for (const auto& [_, x] : cells[k]) v.push_back(x);
    report.aggregates.push_back({section, task, method, trait, nfembed::aggregate(v)});
  }

  auto compare = [&](const std::string& section, const std::string& task, const std::string& trait,
                     const std::string& a, const std::string& b) {
    const auto ia = cells.find({section, task, trait, a}), ib = cells.find({section, task, trait, b});
    if (ia == cells.end() || ib == cells.end()) return;
    std::vector<double> d;
    for (const auto& [rep, va] : ia->second)
      if (const auto it = ib->second.find(rep); it != ib->second.end()) d.push_back(va - it->second);
    ComparisonEntry c{section, task, trait, a, b, std::nullopt, ""};
    try {
      c.test = corrected_resampled_ttest(d, n_train, n_test);
    } catch (const DegenerateError&) {
      c.note = "identical across repeats";
    } catch (const ConfigError& e) {
      c.note = e.what();
    }
    report.comparisons.push_back(std::move(c));
  };

  std::vector<std::tuple<std::string, std::string, std::string>> groups;  // section, task, trait
  for (const auto& k : keys) {
    const auto& [section, task, trait, method] = k;
    std::tuple<std::string, std::string, std::string> g{section, task, trait};
    if (std::ranges::find(groups, g) == groups.end()) groups.push_back(g);
  }
  for (const auto& [section, task, trait] : groups) {
    if (task == kNextFrameTask) {
      compare(section, task, trait, std::string(kCondLstm), std::string(kVanillaLstm));
      compare(section, task, trait, std::string(kVanillaLstm), std::string(kP2AOnly));
      compare(section, task, trait, std::string(kCondLstm), std::string(kP2AOnly));
    } else {
      for (auto other : kTraitMethods)
        if (other != kEmbedding) compare(section, task, trait, std::string(kEmbedding), std::string(other));
    }
  }
}

json EvalReport::to_json() const {
  json reps = json::array(), mets = json::array(), aggs = json::array(), comps = json::array();
  for (const auto& r : repeats)
    reps.push_back({{"index", r.index},
                    {"seed", r.seed},
                    {"complete", r.complete},
                    {"error", r.error},
                    {"n_train", r.n_train},
                    {"n_eval", r.n_eval},
                    {"n_test", r.n_test},
                    {"audit", r.audit.to_json()}});
  for (const auto& m : metrics)
    mets.push_back({{"repeat", m.repeat},
                    {"section", m.section},
                    {"task", m.task},
                    {"method", m.method},
                    {"trait", m.trait},
                    {"value", m.value},
                    {"n", m.n}});
  for (const auto& a : aggregates)
    aggs.push_back({{"section", a.section},
                    {"task", a.task},
                    {"method", a.method},
                    {"trait", a.trait},
                    {"mean", a.summary.mean},
                    {"sd", a.summary.sd},
                    {"n", a.summary.n},
                    {"single_sample", a.summary.single_sample}});
  for (const auto& c : comparisons) {
    json e{{"section", c.section}, {"task", c.task},   {"trait", c.trait},
           {"method_a", c.method_a}, {"method_b", c.method_b}, {"note", c.note}};
    e["t"] = c.test ? json(c.test->t) : json(nullptr);
    e["p"] = c.test ? json(c.test->p) : json(nullptr);
    e["df"] = c.test ? json(c.test->df) : json(nullptr);
    comps.push_back(std::move(e));
  }
  return {{"schema", kReportSchema}, {"code_version", code_version}, {"master_seed", master_seed},
          {"config_hash", config_hash}, {"config", config},         {"repeats", reps},
          {"metrics", mets},           {"aggregates", aggs},        {"comparisons", comps}};
}

EvalReport EvalReport::from_json(const json& j) {
  if (!j.is_object()) throw FormatError("report: expected a JSON object", 0);
  if (need<int>(j, "schema") != kReportSchema) throw FormatError("report: unsupported schema", 0);
  EvalReport r;
  r.code_version = need<std::string>(j, "code_version");
  r.master_seed = need<std::uint64_t>(j, "master_seed");
  r.config_hash = need<std::string>(j, "config_hash");
  r.config = need<json>(j, "config");
  for (const auto& e : need<json>(j, "repeats")) {
    RepeatRecord x;
    x.index = need<std::size_t>(e, "index");
    x.seed = need<std::uint64_t>(e, "seed");
    x.complete = need<bool>(e, "complete");
    x.error = need<std::string>(e, "error");
    x.n_train = need<std::size_t>(e, "n_train");
    x.n_eval = need<std::size_t>(e, "n_eval");
    x.n_test = need<std::size_t>(e, "n_test");
    try {
      x.audit = AuditSummary::from_json(e.at("audit"));
    } catch (const json::exception& err) {
      throw FormatError(std::string("report: audit: ") + err.what(), 0);
    }
    r.repeats.push_back(std::move(x));
  }
  for (const auto& e : need<json>(j, "metrics"))
    r.metrics.push_back({need<std::size_t>(e, "repeat"), need<std::string>(e, "section"),
                         need<std::string>(e, "task"), need<std::string>(e, "method"), need<std::string>(e, "trait"),
                         need<double>(e, "value"), need<std::size_t>(e, "n")});
  for (const auto& e : need<json>(j, "aggregates"))
    r.aggregates.push_back({need<std::string>(e, "section"), need<std::string>(e, "task"),
                            need<std::string>(e, "method"), need<std::string>(e, "trait"),
                            Summary{need<double>(e, "mean"), need<double>(e, "sd"), need<std::size_t>(e, "n"),
                                    need<bool>(e, "single_sample")}});
  for (const auto& e : need<json>(j, "comparisons")) {
    ComparisonEntry c{need<std::string>(e, "section"), need<std::string>(e, "task"), need<std::string>(e, "trait"),
                      need<std::string>(e, "method_a"), need<std::string>(e, "method_b"), std::nullopt,
                      need<std::string>(e, "note")};
    if (!need<json>(e, "t").is_null())
      c.test = TTestResult{need<double>(e, "t"), need<double>(e, "p"), need<double>(e, "df")};
    r.comparisons.push_back(std::move(c));
  }
  return r;
}

std::string report_csv(const EvalReport& report, std::string_view task) {
  std::ostringstream os;
  os.precision(17);
  os << "method,trait,mean,sd,n\n";
  for (const auto& a : report.aggregates)
    if (a.section == kPooled && a.task == task)
      os << a.method << ',' << a.trait << ',' << a.summary.mean << ',' << a.summary.sd << ',' << a.summary.n << '\n';
  return os.str();
}

std::string report_text(const EvalReport& report) {
  std::ostringstream os;
  std::size_t done = 0;
  for (const auto& r : report.repeats) done += r.complete;
  os << "nfembed " << report.code_version << "  seed " << report.master_seed << "  config " << report.config_hash
     << "\nrepeats complete: " << done << "/" << report.repeats.size() << "\n";
  for (const auto& r : report.repeats)
    if (!r.complete) os << "  repeat " << r.index << " aborted: " << r.error << "\n";

  std::vector<std::string> sections;
  for (const auto& a : report.aggregates)
    if (std::ranges::find(sections, a.section) == sections.end()) sections.push_back(a.section);

  auto stars_for = [&](const std::string& section, const std::string& task, const std::string& trait,
                       const std::string& a, const std::string& b) -> std::string {
    const auto* c = report.comparison(section, task, trait, a, b);
    if (!c) return "";
    if (!c->test) return "  (" + c->note + ")";
    return "  t=" + fixed(c->test->t, 3) + " p=" + fixed(c->test->p, 4) + " " +
           std::string(significance_stars(c->test->p));
  };

  for (const auto& section : sections) {
    os << "\n== " << section << " ==\n";
    bool header = false;
    for (const auto& a : report.aggregates) {
      if (a.section != section || a.task != kNextFrameTask) continue;
      if (!header) os << "next-frame error (mean over test subjects), mean +- SD over repeats\n";
      header = true;
      char line[160];
      std::snprintf(line, sizeof line, "  %-14s %12.4f +- %10.4f\n", a.method.c_str(), a.summary.mean, a.summary.sd);
      os << line;
    }
    for (const auto& c : report.comparisons)
      if (c.section == section && c.task == kNextFrameTask)
        os << "  " << c.method_a << " vs " << c.method_b
           << stars_for(section, c.task, c.trait, c.method_a, c.method_b) << "\n";

    std::string trait;
    for (const auto& a : report.aggregates) {
      if (a.section != section || a.task != kTraitTask) continue;
      if (a.trait != trait) {
        trait = a.trait;
        os << "accuracy: " << trait << " (stars: embedding vs method)\n";
      }
      char line[160];
      std::snprintf(line, sizeof line, "  %-20s %6.1f%% +- %5.1f", a.method.c_str(), 100 * a.summary.mean,
                    100 * a.summary.sd);
      os << line;
      if (a.method != kEmbedding) os << stars_for(section, a.task, a.trait, std::string(kEmbedding), a.method);
      os << "\n";
    }
  }
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir,
                                               unsigned formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const char* name, const std::string& text) {
    const auto path = dir / name;
    io::write_file(path.string(), text);
    written.push_back(path);
  };
  if (formats & kReportJson) put("report.json", report.to_json().dump(2) + "\n");
  if (formats & kReportCsv) {
    put("next_frame.csv", report_csv(report, kNextFrameTask));
    put("trait_accuracy.csv", report_csv(report, kTraitTask));
  }
  if (formats & kReportText) put("summary.txt", report_text(report));
  return written;
}

EvalReport load_report(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "report.json" : path;
  const std::string text = io::read_file(file.string());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("report: ") + e.what(), e.byte);
  }
  return EvalReport::from_json(j);
}

}  // namespace nfembed
