#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nfembed/errors.hpp"
#include "nfembed/eval/audit.hpp"
#include "nfembed/eval/config.hpp"
#include "nfembed/eval/experiment.hpp"
#include "nfembed/eval/report.hpp"
#include "nfembed/eval/stats.hpp"
#include "nfembed/synthgen/generator.hpp"

using namespace nfembed;

namespace {

const EvalReport& tiny_report() {
  static const EvalReport r = run_experiment(ExperimentConfig::preset("tiny"));
  return r;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("aggregate") {
  const std::vector<double> ones{1, 1, 1};
  auto s = aggregate(ones);
  CHECK(s.mean == 1.0);
  CHECK(s.sd == 0.0);
  CHECK(s.n == 3);
  CHECK_FALSE(s.single_sample);

  const std::vector<double> pair{0, 2};
  s = aggregate(pair);
  CHECK(s.mean == doctest::Approx(1.0));
  CHECK(s.sd == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  const std::vector<double> one{4.5};
  s = aggregate(one);
  CHECK(s.single_sample);
  CHECK(s.sd == 0.0);

  CHECK_THROWS_AS(aggregate(std::span<const double>{}), DataError);
}

TEST_CASE("corrected resampled t-test") {
  SUBCASE("reference value") {
    // mean 0.2, var 0.01, scale 1/3 + 20/60 = 2/3: t = 0.2 / sqrt(0.01 * 2/3)
    const std::vector<double> d{0.1, 0.2, 0.3};
    const auto r = corrected_resampled_ttest(d, 60, 20);
    CHECK(std::abs(r.t - 2.4495) < 1e-4);
    CHECK(std::abs(r.t - 0.2 / std::sqrt(0.01 * 2.0 / 3.0)) < 1e-12);
    CHECK(r.df == 2.0);
    CHECK(r.p > 0.05);
    CHECK(r.p < 0.2);
  }
  SUBCASE("sign flips with the differences, p does not") {
    const std::vector<double> d{0.3, -0.1, 0.5, 0.2};
    const std::vector<double> neg{-0.3, 0.1, -0.5, -0.2};
    const auto a = corrected_resampled_ttest(d, 36, 12);
    const auto b = corrected_resampled_ttest(neg, 36, 12);
    CHECK(a.t == -b.t);
    CHECK(a.p == b.p);
  }
  SUBCASE("zero-centred noise is not significant") {
    const std::vector<double> d{0.1, -0.1, 0.05, -0.05, 0.02, -0.02};
    const auto r = corrected_resampled_ttest(d, 36, 12);
    CHECK(r.t == doctest::Approx(0.0));
    CHECK(r.p == doctest::Approx(1.0));
  }
  SUBCASE("degenerate and invalid input") {
    const std::vector<double> zeros{0, 0, 0};
    CHECK_THROWS_AS(corrected_resampled_ttest(zeros, 60, 20), DegenerateError);
    const std::vector<double> same{0.25, 0.25};
    CHECK_THROWS_AS(corrected_resampled_ttest(same, 60, 20), DegenerateError);
    // equal up to rounding
    const std::vector<double> rounded{0.5 - 7.0 / 12.0, 5.0 / 12.0 - 0.5};
    CHECK(rounded[0] != rounded[1]);
    CHECK_THROWS_AS(corrected_resampled_ttest(rounded, 36, 12), DegenerateError);
    const std::vector<double> single{1.0};
    CHECK_THROWS_AS(corrected_resampled_ttest(single, 60, 20), ConfigError);
    const std::vector<double> d{0.1, 0.2};
    CHECK_THROWS_AS(corrected_resampled_ttest(d, 0, 20), ConfigError);
  }
}

TEST_CASE("Student t against tables") {
  struct Row {
    double df, q05, q01;
  };
  // two-sided critical values
  const Row rows[] = {{5, 2.570582, 4.032143}, {9, 2.262157, 3.249836}, {29, 2.045230, 2.756386}};
  for (const auto& r : rows) {
    CAPTURE(r.df);
    CHECK(std::abs(student_t_two_sided_p(r.q05, r.df) - 0.05) < 5e-5);
    CHECK(std::abs(student_t_two_sided_p(r.q01, r.df) - 0.01) < 5e-5);
    CHECK(std::abs(student_t_quantile(0.975, r.df) - r.q05) < 5e-5);
    CHECK(std::abs(student_t_quantile(0.995, r.df) - r.q01) < 5e-5);
  }
  CHECK(student_t_cdf(0.0, 7) == doctest::Approx(0.5));
  CHECK(student_t_cdf(-1.3, 4) + student_t_cdf(1.3, 4) == doctest::Approx(1.0));
  // df = 1 is Cauchy
  CHECK(student_t_cdf(1.0, 1) == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
  // I_x(1, 1) = x
  CHECK(incomplete_beta(1, 1, 0.37) == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("significance stars") {
  CHECK(significance_stars(0.03) == "*");
  CHECK(significance_stars(0.005) == "**");
  CHECK(significance_stars(0.2).empty());
  CHECK(significance_stars(0.05).empty());
}

TEST_CASE("label audit") {
  GeneratorConfig g;
  g.n_subjects = 5;
  const Dataset ds = generate(g);
  const std::vector<std::string> test{ds.subjects[3].id};
  LabelStore store(ds, test);

  CHECK(store.read(ds.subjects[0].id, Trait::stai, LabelUse::target) == ds.subjects[0].traits.stai);
  store.record(ds.subjects[3].id, LabelUse::feature, Trait::age);
  auto s = store.summary();
  CHECK(s.train_target_reads == 1);
  CHECK(s.feature_reads == kAllTraits.size() - 1);
  CHECK(s.test_target_reads_before_scoring == 0);

  store.read(ds.subjects[3].id, Trait::age, LabelUse::target);
  CHECK(store.summary().test_target_reads_before_scoring == 1);
  store.open_scoring();
  store.read(ds.subjects[3].id, Trait::age, LabelUse::target);
  s = store.summary();
  CHECK(s.test_target_reads_before_scoring == 1);
  CHECK(s.test_target_reads_at_scoring == 1);
  CHECK(AuditSummary::from_json(s.to_json()) == s);

  const auto rec = store.record(ds.subjects[1].id, LabelUse::feature, Trait::tas20);
  CHECK_FALSE(rec.tas20.has_value());
  CHECK(rec.stai == ds.subjects[1].traits.stai);
  CHECK_THROWS_AS(store.read("nobody", Trait::age, LabelUse::target), LookupError);
}

TEST_CASE("experiment config") {
  const auto d = ExperimentConfig::preset("default");
  CHECK(d.repeats == 10);
  CHECK(d.generator.n_subjects == 60);
  CHECK_THROWS_AS(ExperimentConfig::preset("huge"), ConfigError);

  SUBCASE("json round trip") {
    const auto t = ExperimentConfig::preset("tiny");
    const auto back = ExperimentConfig::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
    CHECK(config_hash(back.to_json()) == config_hash(t.to_json()));
    CHECK(config_hash(back.to_json()).size() == 16);
  }
  SUBCASE("overlay on a preset") {
    const auto c = ExperimentConfig::from_json({{"preset", "tiny"}, {"repeats", 3}, {"lstm", {{"epochs", 7}}}});
    CHECK(c.repeats == 3);
    CHECK(c.lstm.epochs == 7);
    CHECK(c.generator.n_subjects == ExperimentConfig::preset("tiny").generator.n_subjects);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"repeat", 3}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"lstm", {{"epoch", 3}}}}), ConfigError);
    auto c = ExperimentConfig::preset("tiny");
    c.repeats = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ExperimentConfig::preset("tiny");
    c.methods = {"oracle"};
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("method selection") {
    auto c = ExperimentConfig::preset("tiny");
    CHECK(c.runs(kFmriCnn));
    c.methods = {std::string(kCondLstm)};
    CHECK(c.runs(kCondLstm));
    CHECK_FALSE(c.runs(kVanillaLstm));
  }
}

namespace {

EvalReport next_frame_report(std::span<const double> cond, std::span<const double> vanilla) {
  EvalReport r;
  auto add = [&](std::size_t rep, std::string_view m, double v) {
    r.metrics.push_back({rep, std::string(kPooled), std::string(kNextFrameTask), std::string(m),
                         std::string(kNextFrameTask), v, 2});
  };
  for (std::size_t i = 0; i < cond.size(); ++i) {
    r.repeats.push_back({i, 10 + i, true, "", 6, 2, 2, {}});
    add(i, kCondLstm, cond[i]);
    add(i, kVanillaLstm, vanilla[i]);
  }
  return r;
}

}  // namespace

TEST_CASE("summaries recompute from per-repeat metrics") {
  const std::vector<double> cond{1.0, 3.0}, vanilla{2.0, 5.0};
  EvalReport r = next_frame_report(cond, vanilla);
  r.repeats.push_back({2, 12, false, "lstm: boom", 6, 2, 2, {}});
  r.metrics.push_back({2, std::string(kPooled), std::string(kNextFrameTask), std::string(kCondLstm),
                       std::string(kNextFrameTask), 100.0, 2});
  summarize(r);

  CHECK_FALSE(r.complete());
  const auto& a = r.aggregate(kPooled, kNextFrameTask, kCondLstm, kNextFrameTask);
  CHECK(a.summary.mean == doctest::Approx(2.0));
  CHECK(a.summary.n == 2);
  CHECK_THROWS_AS(r.aggregate(kPooled, kNextFrameTask, kP2AOnly, kNextFrameTask), LookupError);

  const auto* c = r.comparison(kPooled, kNextFrameTask, kNextFrameTask, kCondLstm, kVanillaLstm);
  REQUIRE(c != nullptr);
  REQUIRE(c->test.has_value());
  const std::vector<double> diffs{-1.0, -2.0};
  CHECK(c->test->t == doctest::Approx(corrected_resampled_ttest(diffs, 6, 2).t));

  // same difference every repeat: a note instead of a statistic
  const std::vector<double> flat_cond{1.0, 1.0}, flat_vanilla{2.0, 2.0};
  EvalReport flat = next_frame_report(flat_cond, flat_vanilla);
  summarize(flat);
  CHECK(flat.complete());
  const auto* fc = flat.comparison(kPooled, kNextFrameTask, kNextFrameTask, kCondLstm, kVanillaLstm);
  REQUIRE(fc != nullptr);
  CHECK_FALSE(fc->test.has_value());
  CHECK(fc->note == "identical across repeats");
}

TEST_CASE("tiny experiment") {
  const EvalReport& r = tiny_report();
  const auto cfg = ExperimentConfig::preset("tiny");
  REQUIRE(r.repeats.size() == 2);
  CHECK(r.complete());
  CHECK(r.master_seed == cfg.seed);
  CHECK(r.config == cfg.to_json());
  CHECK(r.config_hash == config_hash(cfg.to_json()));

  SUBCASE("two per-repeat rows per method and trait") {
    for (auto m : kNextFrameMethods) CHECK(r.values(kPooled, kNextFrameTask, m, kNextFrameTask).size() == 2);
    for (auto m : kTraitMethods)
      for (Trait t : kAllTraits) {
        CAPTURE(m);
        CAPTURE(trait_name(t));
        CHECK(r.values(kPooled, kTraitTask, m, trait_name(t)).size() == 2);
      }
  }
  SUBCASE("no test label is read before scoring") {
    for (const auto& rep : r.repeats) {
      CHECK(rep.audit.test_target_reads_before_scoring == 0);
      CHECK(rep.audit.test_target_reads_at_scoring > 0);
      CHECK(rep.audit.train_target_reads > 0);
    }
  }
  SUBCASE("aggregates match the per-repeat values") {
    for (const auto& a : r.aggregates) {
      const auto v = r.values(a.section, a.task, a.method, a.trait);
      CHECK(aggregate(v) == a.summary);
    }
  }
  SUBCASE("same seed, same report") {
    const EvalReport again = run_experiment(cfg);
    CHECK(again == r);
    CHECK(again.to_json().dump() == r.to_json().dump());
  }
  SUBCASE("thread count does not change the report") {
    RunOptions o;
    o.threads = 2;
    CHECK(run_experiment(cfg, o) == r);
  }
  SUBCASE("json round trip") {
    const auto back = EvalReport::from_json(r.to_json());
    CHECK(back == r);
    CHECK_THROWS_AS(EvalReport::from_json(nlohmann::json{{"schema", 1}}), FormatError);
  }
  SUBCASE("csv has one row per method and trait") {
    const auto nf = report_csv(r, kNextFrameTask);
    CHECK(nf.starts_with("method,trait,mean,sd,n\n"));
    CHECK(count_lines(nf) == 1 + std::size(kNextFrameMethods));
    const auto tr = report_csv(r, kTraitTask);
    CHECK(count_lines(tr) == 1 + std::size(kTraitMethods) * kAllTraits.size());
  }
  SUBCASE("report files") {
    const auto dir = std::filesystem::temp_directory_path() / "nfembed_test_eval_report";
    std::filesystem::remove_all(dir);
    const auto files = emit_report(r, dir);
    CHECK(files.size() == 4);
    for (const auto& f : files) CHECK(std::filesystem::exists(f));
    CHECK(load_report(dir) == r);
    CHECK(load_report(dir / "report.json") == r);
    std::ifstream in(dir / "summary.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str().find("cond_lstm") != std::string::npos);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_report(dir), IoError);
  }
}

TEST_CASE("a failing stage aborts only its repeat") {
  auto cfg = ExperimentConfig::preset("tiny");
  cfg.generator.dims = {3, 3, 2};  // below the CNN kernel
  cfg.methods = {std::string(kDummy), std::string(kFmriCnn)};
  const auto r = run_experiment(cfg);
  REQUIRE(r.repeats.size() == 2);
  CHECK_FALSE(r.complete());
  for (const auto& rep : r.repeats) {
    CHECK_FALSE(rep.complete);
    CHECK(rep.error.starts_with("fmri_cnn"));
  }
  CHECK(r.metrics.empty());
  CHECK(r.aggregates.empty());
}
