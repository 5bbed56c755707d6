// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails. An optional argument names a directory for the
// report set of the 10-repeat synthetic experiment.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_suites.hpp"
#include "nfembed/datamodel/labels.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/eval/experiment.hpp"
#include "nfembed/eval/stats.hpp"
#include "nfembed/pipeline/lstm.hpp"
#include "nfembed/pipeline/p2a.hpp"
#include "nfembed/synthgen/generator.hpp"

using namespace nfembed;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, std::string_view title, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << detail << std::endl;
  failures += !pass;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void gradient_integrity() {
  const auto t0 = Clock::now();
  struct Suite {
    const char* name;
    GradCheckResult (*run)(std::uint64_t);
  };
  const Suite suites[] = {{"p2a", testing::p2a_gradients},
                          {"lstm cell", testing::lstm_gradients},
                          {"cnn", testing::cnn_gradients},
                          {"classifier", testing::classifier_gradients}};
  double worst = 0;
  std::ostringstream detail;
  for (const auto& s : suites) {
    double m = 0;
    for (std::uint64_t draw = 0; draw < 10; ++draw) m = std::max(m, s.run(draw).max_rel_error);
    worst = std::max(worst, m);
    detail << s.name << ' ' << fmt("%.2e", m) << ", ";
  }
  const double secs = seconds_since(t0);
  detail << "max " << fmt("%.2e", worst) << " (< 1e-5), " << fmt("%.1f", secs) << " s (< 60)";
  verdict(1, "gradient integrity, 10 draws per suite", worst < 1e-5 && secs < 60, detail.str());
}

double pooled_mean(const EvalReport& r, std::string_view task, std::string_view method, std::string_view trait) {
  try {
    return r.aggregate(kPooled, task, method, trait).summary.mean;
  } catch (const LookupError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

void next_frame_ordering(const EvalReport& r, double secs) {
  const double cond = pooled_mean(r, kNextFrameTask, kCondLstm, kNextFrameTask);
  const double vanilla = pooled_mean(r, kNextFrameTask, kVanillaLstm, kNextFrameTask);
  const double p2a = pooled_mean(r, kNextFrameTask, kP2AOnly, kNextFrameTask);
  const auto* c = r.comparison(kPooled, kNextFrameTask, kNextFrameTask, kCondLstm, kVanillaLstm);
  const double p = c && c->test ? c->test->p : std::numeric_limits<double>::quiet_NaN();
  std::ostringstream d;
  d << "cond " << fmt("%.3f", cond) << " < vanilla " << fmt("%.3f", vanilla) << " < p2a " << fmt("%.3f", p2a)
    << ", cond vs vanilla t " << (c && c->test ? fmt("%.3f", c->test->t) : "n/a") << " p " << fmt("%.2e", p)
    << " (< 0.05), " << r.repeats.size() << " repeats in " << fmt("%.0f", secs) << " s (< 600)";
  const bool pass = r.complete() && r.repeats.size() == 10 && cond < vanilla && vanilla < p2a && p < 0.05 && secs < 600;
  verdict(2, "next-frame ordering on the default synthetic config", pass, d.str());
}

void trait_prediction(const EvalReport& r) {
  double gap = 0, emb_sum = 0, stats_sum = 0;
  std::ostringstream d;
  for (Trait t : kAllTraits) {
    const auto name = trait_name(t);
    const double e = pooled_mean(r, kTraitTask, kEmbedding, name);
    const double dummy = pooled_mean(r, kTraitTask, kDummy, name);
    const double stats = pooled_mean(r, kTraitTask, kFmriStats, name);
    gap += 100 * (e - dummy);
    emb_sum += e;
    stats_sum += stats;
    d << name << ' ' << fmt("%.1f", 100 * e) << "/" << fmt("%.1f", 100 * dummy) << "/" << fmt("%.1f", 100 * stats)
      << ", ";
  }
  const double n = kAllTraits.size();
  gap /= n;
  d << "(embedding/dummy/fmri_stats %); mean gap over dummy " << fmt("%+.1f", gap) << " points (>= 15), embedding "
    << fmt("%.1f", 100 * emb_sum / n) << "% vs fmri_stats " << fmt("%.1f", 100 * stats_sum / n) << "%";
  verdict(3, "trait prediction beats dummy and fmri_stats", gap >= 15 && emb_sum > stats_sum, d.str());
}

void permutation_control(const EvalReport& r) {
  double perm_sum = 0, dummy_sum = 0;
  std::ostringstream d;
  for (Trait t : kAllTraits) {
    const auto name = trait_name(t);
    const double p = pooled_mean(r, kTraitTask, kEmbeddingPermuted, name);
    const double dummy = pooled_mean(r, kTraitTask, kDummy, name);
    perm_sum += p;
    dummy_sum += dummy;
    d << name << ' ' << fmt("%.1f", 100 * p) << "/" << fmt("%.1f", 100 * dummy) << ", ";
  }
  const double diff = 100 * (perm_sum - dummy_sum) / kAllTraits.size();
  d << "(permuted/dummy %); mean difference " << fmt("%+.1f", diff) << " points (within +-10)";
  verdict(8, "permutation control", std::abs(diff) <= 10, d.str());
}

void inference_contract() {
  GeneratorConfig g;
  g.n_subjects = 12;
  Dataset ds = generate(g);
  // held-out clone: same latent profile and noise as subject 0
  SubjectRecord clone = ds.subjects[0];
  clone.id = "clone-of-" + clone.id;
  ds.subjects.push_back(clone);

  std::vector<std::string> train_ids, clone_ids{clone.id};
  for (std::size_t i = 0; i + 1 < ds.subjects.size(); ++i) train_ids.push_back(ds.subjects[i].id);
  const auto cfg = ExperimentConfig::preset("default");
  const auto train = prepare_subjects(ds, train_ids);
  auto pc = cfg.p2a;
  pc.seed = 11;
  const P2ATranslator phi = train_p2a(train, {}, pc).model;
  const auto train_in = build_inputs(phi, train);
  const auto clone_in = build_inputs(phi, prepare_subjects(ds, clone_ids));
  auto lc = cfg.lstm;
  lc.seed = 12;
  auto trained = train_cond_lstm(train_in, {}, lc);

  const auto phi_before = parameter_checksum(phi.parameters());
  const auto psi_before = parameter_checksum(std::as_const(trained.model).parameters());
  const auto fit = fit_new_subject_embedding(trained.model, clone_in[0], trained.table.centroid(), cfg.fit);
  const bool frozen = parameter_checksum(phi.parameters()) == phi_before &&
                      parameter_checksum(std::as_const(trained.model).parameters()) == psi_before;

  const Tensor own = trained.table.row(train_ids[0]);
  const double original = sequence_loss(trained.model, std::span(train_in).first(1), &own)[0];
  const double rel = std::abs(fit.final_loss[0] - original) / original;
  std::ostringstream d;
  d << "parameters " << (frozen ? "bit-identical" : "CHANGED") << ", clone loss " << fmt("%.4f", fit.final_loss[0])
    << " vs original " << fmt("%.4f", original) << ", relative difference " << fmt("%.2f", 100 * rel) << "% (< 5%)";
  verdict(4, "inference contract on a held-out clone", frozen && rel < 0.05, d.str());
}

void quantization_exactness() {
  int checked = 0, wrong = 0;
  auto expect = [&](double v, const QuantizationBins& b, int label) {
    ++checked;
    wrong += quantize(v, b) != label;
  };
  const QuantizationBins cases[] = {{0, 1}, {50, 10}, {-3, 0.5}, {40, 0.25}};
  const double inf = std::numeric_limits<double>::infinity();
  for (const auto& b : cases) {
    const auto e = b.edges();
    // (-inf, mu-2s], (mu-2s, mu-s], (mu-s, mu+s], (mu+s, mu+2s], (mu+2s, inf)
    for (int k = 0; k < 4; ++k) {
      expect(e[k], b, k);
      expect(std::nextafter(e[k], -inf), b, k);
      expect(std::nextafter(e[k], inf), b, k + 1);
    }
    expect(-inf, b, 0);
    expect(inf, b, 4);
    expect(b.mu, b, 2);
    expect(-std::numeric_limits<double>::max(), b, 0);
    expect(std::numeric_limits<double>::max(), b, 4);
  }
  // bins fitted from data: {0, 2, 4} has mean 2 and SD 2, edges -2, 0, 4, 6
  const std::vector<double> train{0, 2, 4};
  const auto labeler = TraitLabeler::fit(Trait::stai, train);
  const std::pair<double, int> fitted[] = {{-2, 0}, {-1.5, 1}, {0, 1}, {0.5, 2}, {4, 2}, {5, 3}, {6, 3}, {6.5, 4}};
  for (auto [v, label] : fitted) {
    ++checked;
    wrong += labeler.label(v) != label;
  }
  bool nan_rejected = false;
  try {
    quantize(std::nan(""), cases[0]);
  } catch (const LabelError&) {
    nan_rejected = true;
  }
  verdict(5, "quantization boundaries", wrong == 0 && nan_rejected,
          std::to_string(checked - wrong) + "/" + std::to_string(checked) + " boundary cases, NaN " +
              (nan_rejected ? "rejected" : "accepted"));
}

void statistics_oracle() {
  const std::vector<double> d{0.1, 0.2, 0.3};
  const double t = corrected_resampled_ttest(d, 60, 20).t;
  struct Row {
    double df, q05, q01;
  };
  const Row rows[] = {{5, 2.570582, 4.032143}, {9, 2.262157, 3.249836}, {29, 2.045230, 2.756386}};
  double worst = 0;
  for (const auto& r : rows) {
    worst = std::max(worst, std::abs(student_t_two_sided_p(r.q05, r.df) - 0.05));
    worst = std::max(worst, std::abs(student_t_two_sided_p(r.q01, r.df) - 0.01));
  }
  const bool pass = std::abs(t - 2.4495) <= 1e-4 && worst < 5e-5;
  verdict(6, "statistics oracle", pass,
          "t " + fmt("%.6f", t) + " (2.4495 +- 1e-4), worst p error at tabulated quantiles " + fmt("%.1e", worst) +
              " (< 5e-5)");
}

bool audit_clean(const EvalReport& r) {
  for (const auto& rep : r.repeats)
    if (rep.audit.test_target_reads_before_scoring != 0 || rep.audit.test_target_reads_at_scoring == 0) return false;
  return !r.repeats.empty();
}

void determinism_and_leakage(const EvalReport& main_report) {
  const auto cfg = ExperimentConfig::preset("tiny");
  RunOptions one;
  one.threads = 1;
  const std::string a = run_experiment(cfg, one).to_json().dump();
  const EvalReport second = run_experiment(cfg, one);
  const bool same = a == second.to_json().dump();
  const bool clean = audit_clean(second) && audit_clean(main_report);
  std::size_t reads = 0;
  for (const auto& rep : main_report.repeats) reads += rep.audit.test_target_reads_before_scoring;
  verdict(7, "determinism and leakage", same && clean,
          std::string("tiny preset twice: reports ") + (same ? "byte-identical" : "DIFFER") +
              "; test-label reads before scoring " + std::to_string(reads) + " over " +
              std::to_string(main_report.repeats.size()) + " default repeats");
}

}  // namespace

int main(int argc, char** argv) {
  gradient_integrity();
  inference_contract();
  quantization_exactness();
  statistics_oracle();

  auto cfg = ExperimentConfig::preset("default");
  cfg.methods = {std::string(kP2AOnly),  std::string(kVanillaLstm),       std::string(kCondLstm),
                 std::string(kEmbedding), std::string(kEmbeddingPermuted), std::string(kDummy),
                 std::string(kFmriStats)};
  RunOptions opt;
  opt.threads = 1;
  opt.progress = [](const std::string& s) {
    if (s.ends_with("done")) std::cerr << s << '\n';
  };
  const auto t0 = Clock::now();
  const EvalReport report = run_experiment(cfg, opt);
  const double secs = seconds_since(t0);
  if (argc > 1) emit_report(report, argv[1]);
  for (const auto& rep : report.repeats)
    if (!rep.complete) std::cout << "repeat " << rep.index << " failed in " << rep.error << '\n';

  next_frame_ordering(report, secs);
  trait_prediction(report);
  determinism_and_leakage(report);
  permutation_control(report);

  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria fail") << std::endl;
  return failures == 0 ? 0 : 1;
}
