#include "nfembed/eval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include "nfembed/datamodel/container.hpp"
#include "nfembed/datamodel/labels.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/eval/audit.hpp"
#include "nfembed/pipeline/lstm.hpp"
#include "nfembed/pipeline/p2a.hpp"
#include "nfembed/prediction/baselines.hpp"
#include "nfembed/prediction/classifier.hpp"
#include "nfembed/version.hpp"

namespace nfembed {
namespace {

enum Stream : std::uint64_t { kSplit = 0, kP2A = 1, kCond = 2, kVanilla = 3, kCnn = 4, kPermute = 5 };

struct RepeatOutput {
  RepeatRecord record;
  std::vector<MetricEntry> metrics;
};

struct Section {
  std::string name;
  std::vector<std::size_t> members;  // indices into the test list
};

std::vector<Section> test_sections(const Dataset& ds, std::span<const std::string> test) {
  std::vector<Section> out{{std::string(kPooled), {}}};
  std::map<Cohort, std::vector<std::size_t>> by_cohort;
  for (std::size_t i = 0; i < test.size(); ++i) {
    out[0].members.push_back(i);
    by_cohort[ds.subject(test[i]).cohort].push_back(i);
  }
  for (auto& [c, members] : by_cohort) out.push_back({std::string(cohort_name(c)), std::move(members)});
  return out;
}

std::vector<int> head_labels(const LinearClassifier& c, const Tensor& x, std::size_t head) {
  std::vector<int> out;
  for (std::size_t r = 0; r < x.rows(); ++r) out.push_back(predict_traits(c, x.row(r))[head].label);
  return out;
}

class RepeatRunner {
 public:
  RepeatRunner(const ExperimentConfig& cfg, const Dataset& ds, std::size_t index, const RunOptions& opt,
               std::mutex& log_mutex)
      : cfg_(cfg), ds_(ds), index_(index), opt_(opt), log_mutex_(log_mutex) {}

  RepeatOutput run() {
    RepeatOutput out;
    out.record.index = index_;
    out.record.seed = repeat_seed(cfg_.seed, index_);
    try {
      body(out);
      out.record.complete = true;
      note("done");
    } catch (const std::exception& e) {
      out.record.complete = false;
      out.record.error = stage_ + ": " + e.what();
      out.metrics.clear();
      note("aborted: " + out.record.error);
    }
    if (store_) out.record.audit = store_->summary();
    return out;
  }

 private:
  void note(const std::string& msg) {
    if (!opt_.progress) return;
    std::lock_guard lock(log_mutex_);
    opt_.progress("repeat " + std::to_string(index_) + ": " + msg);
  }

  void enter(std::string stage) {
    stage_ = std::move(stage);
    note(stage_);
  }

  std::uint64_t seed(Stream s) const { return derive_seed(repeat_seed(cfg_.seed, index_), s); }

  void emit(RepeatOutput& out, std::string_view task, std::string_view method, std::string_view trait,
            const std::vector<Section>& sections, const std::function<double(const Section&)>& metric) {
    for (const auto& s : sections) {
      if (s.members.empty()) continue;
      const double v = metric(s);
      if (std::isnan(v)) continue;
      out.metrics.push_back(
          {index_, s.name, std::string(task), std::string(method), std::string(trait), v, s.members.size()});
    }
  }

  void body(RepeatOutput& out) {
    enter("split");
    const SplitSpec split = split_subjects(ds_, seed(kSplit));
    out.record.n_train = split.train.size();
    out.record.n_eval = split.eval.size();
    out.record.n_test = split.test.size();
    store_.emplace(ds_, split.test);
    const auto sections = test_sections(ds_, split.test);

    const auto train = prepare_subjects(ds_, split.train);
    const auto eval = prepare_subjects(ds_, split.eval);
    const auto test = prepare_subjects(ds_, split.test);

    enter("p2a");
    P2ATrainConfig p2a_cfg = cfg_.p2a;
    p2a_cfg.seed = seed(kP2A);
    const P2ATranslator phi = train_p2a(train, eval, p2a_cfg).model;

    const bool need_cond = cfg_.runs(kCondLstm) || cfg_.runs(kEmbedding) || cfg_.runs(kEmbeddingPermuted);
    const bool need_vanilla = cfg_.runs(kVanillaLstm);
    std::vector<SubjectInputs> train_in, eval_in, test_in;
    if (need_cond || need_vanilla) {
      enter("lstm inputs");
      train_in = build_inputs(phi, train);
      eval_in = build_inputs(phi, eval);
      test_in = build_inputs(phi, test);
    }

    std::optional<LstmTrainResult> cond;
    Tensor test_embeddings;
    if (need_cond) {
      enter("cond_lstm");
      LstmTrainConfig c = cfg_.lstm;
      c.seed = seed(kCond);
      cond = train_cond_lstm(train_in, eval_in, c);
      enter("fit test embeddings");
      test_embeddings = fit_embeddings(cond->model, test_in, cond->table.centroid(), cfg_.fit).embeddings;
    }
    std::optional<LstmTrainResult> vanilla;
    if (need_vanilla) {
      enter("vanilla_lstm");
      LstmTrainConfig c = cfg_.lstm;
      c.seed = seed(kVanilla);
      vanilla = train_vanilla_lstm(train_in, eval_in, c);
    }

    enter("next-frame scoring");
    auto mean_over = [](const std::vector<double>& per_subject) {
      return [&per_subject](const Section& s) {
        double sum = 0;
        for (std::size_t i : s.members) sum += per_subject[i];
        return sum / static_cast<double>(s.members.size());
      };
    };
    std::vector<double> p2a_err, cond_err, vanilla_err;
    if (cfg_.runs(kP2AOnly)) {
      for (std::size_t i = 0; i < test.size(); ++i) p2a_err.push_back(p2a_loss(phi, std::span(test).subspan(i, 1)));
      emit(out, kNextFrameTask, kP2AOnly, kNextFrameTask, sections, mean_over(p2a_err));
    }
    if (cfg_.runs(kVanillaLstm)) {
      vanilla_err = sequence_loss(vanilla->model, test_in, nullptr);
      emit(out, kNextFrameTask, kVanillaLstm, kNextFrameTask, sections, mean_over(vanilla_err));
    }
    if (cfg_.runs(kCondLstm)) {
      cond_err = sequence_loss(cond->model, test_in, &test_embeddings);
      emit(out, kNextFrameTask, kCondLstm, kNextFrameTask, sections, mean_over(cond_err));
    }

    const auto traits = cfg_.resolved_traits();
    const bool any_trait_method = std::ranges::any_of(kTraitMethods, [&](auto m) { return cfg_.runs(m); });
    if (!any_trait_method || traits.empty()) return;

    enter("trait labels");
    std::vector<Trait> used;
    std::vector<TraitLabeler> labelers;
    std::vector<TraitTargets> targets;
    for (Trait t : traits) {
      std::vector<std::optional<double>> raw;
      std::vector<double> present;
      for (const auto& id : split.train) {
        raw.push_back(store_->read(id, t, LabelUse::target));
        if (raw.back()) present.push_back(*raw.back());
      }
      if (present.empty()) continue;
      const auto labeler = TraitLabeler::fit(t, present);
      TraitTargets tt{t, labeler.classes(), {}};
      for (const auto& v : raw) tt.labels.push_back(v ? labeler.label(*v) : -1);
      used.push_back(t);
      labelers.push_back(labeler);
      targets.push_back(std::move(tt));
    }
    if (used.empty()) return;

    // predictions[method][trait index] -> labels in test order
    std::map<std::string, std::vector<std::vector<int>>> predictions;

    if (cfg_.runs(kEmbedding) || cfg_.runs(kEmbeddingPermuted)) {
      Tensor train_e({split.train.size(), cond->table.dim()});
      for (std::size_t i = 0; i < split.train.size(); ++i) {
        const Tensor row = cond->table.row(split.train[i]);
        std::copy(row.values().begin(), row.values().end(), train_e.row(i).begin());
      }
      if (cfg_.runs(kEmbedding)) {
        enter("embedding classifier");
        const auto rho = train_classifier(train_e, targets, cfg_.classifier);
        for (std::size_t h = 0; h < used.size(); ++h)
          predictions[std::string(kEmbedding)].push_back(head_labels(rho, test_embeddings, h));
      }
      if (cfg_.runs(kEmbeddingPermuted)) {
        enter("permutation control");
        Rng rng(seed(kPermute));
        auto shuffled = targets;
        for (auto& tt : shuffled) {
          std::vector<std::size_t> slots;
          for (std::size_t i = 0; i < tt.labels.size(); ++i)
            if (tt.labels[i] >= 0) slots.push_back(i);
          std::vector<int> values;
          for (std::size_t i : slots) values.push_back(tt.labels[i]);
          rng.shuffle(std::span(values));
          for (std::size_t k = 0; k < slots.size(); ++k) tt.labels[slots[k]] = values[k];
        }
        const auto rho = train_classifier(train_e, shuffled, cfg_.classifier);
        for (std::size_t h = 0; h < used.size(); ++h)
          predictions[std::string(kEmbeddingPermuted)].push_back(head_labels(rho, test_embeddings, h));
      }
    }

    if (cfg_.runs(kDummy)) {
      enter("dummy");
      for (const auto& tt : targets)
        predictions[std::string(kDummy)].push_back(std::vector<int>(split.test.size(), modal_label(tt.labels)));
    }

    if (cfg_.runs(kFmriStats)) {
      enter("fmri_stats");
      const std::size_t runs = ds_.layout.runs;
      std::vector<std::vector<double>> tr, te;
      for (const auto& s : train) tr.push_back(fmri_stats_features(s.seq, runs));
      for (const auto& s : test) te.push_back(fmri_stats_features(s.seq, runs));
      const auto head = train_classifier(stack_features(tr), targets, cfg_.classifier);
      const Tensor xt = stack_features(te);
      for (std::size_t h = 0; h < used.size(); ++h)
        predictions[std::string(kFmriStats)].push_back(head_labels(head, xt, h));
    }

    if (cfg_.runs(kFmriCnn)) {
      enter("fmri_cnn");
      std::vector<SubjectSequences> tr, te;
      for (const auto& s : train) tr.push_back(s.seq);
      for (const auto& s : test) te.push_back(s.seq);
      CnnConfig c = cfg_.cnn;
      c.seed = seed(kCnn);
      const Volume vol{ds_.layout.dims.h, ds_.layout.dims.w, ds_.layout.dims.d};
      auto cnn = train_fmri_cnn(vol, tr, targets, c);
      predictions[std::string(kFmriCnn)] = cnn.predict(cnn_frames(te));
    }

    if (cfg_.runs(kClinicalSvr)) {
      enter("clinical_svr");
      auto& slot = predictions[std::string(kClinicalSvr)];
      for (std::size_t h = 0; h < used.size(); ++h) {
        const Trait t = used[h];
        std::vector<TraitRecord> tr, te;
        for (const auto& id : split.train) {
          TraitRecord r = store_->record(id, LabelUse::feature, t);
          r.set(t, store_->read(id, t, LabelUse::target));
          tr.push_back(r);
        }
        for (const auto& id : split.test) te.push_back(store_->record(id, LabelUse::feature, t));
        try {
          slot.push_back(clinical_svr(tr, te, t, labelers[h], cfg_.svr).labels);
        } catch (const ConfigError& e) {
          note(std::string("clinical_svr skips ") + std::string(trait_name(t)) + ": " + e.what());
          slot.emplace_back();
        }
      }
    }

    enter("trait scoring");
    store_->open_scoring();
    for (std::size_t h = 0; h < used.size(); ++h) {
      std::vector<int> truth;
      for (const auto& id : split.test) {
        const auto v = store_->read(id, used[h], LabelUse::target);
        truth.push_back(v ? labelers[h].label(*v) : -1);
      }
      for (auto method : kTraitMethods) {
        const auto it = predictions.find(std::string(method));
        if (it == predictions.end() || it->second[h].empty()) continue;
        const auto& pred = it->second[h];
        emit(out, kTraitTask, method, trait_name(used[h]), sections, [&](const Section& s) {
          std::vector<int> a, b;
          for (std::size_t i : s.members) {
            a.push_back(truth[i]);
            b.push_back(pred[i]);
          }
          return accuracy(a, b);
        });
      }
    }
  }

  const ExperimentConfig& cfg_;
  const Dataset& ds_;
  std::size_t index_;
  const RunOptions& opt_;
  std::mutex& log_mutex_;
  std::string stage_ = "setup";
  std::optional<LabelStore> store_;
};

}  // namespace

std::uint64_t repeat_seed(std::uint64_t master, std::size_t index) { return derive_seed(master, index); }

Dataset experiment_dataset(const ExperimentConfig& config) {
  return config.dataset.empty() ? generate(config.generator) : load_dataset(config.dataset);
}

EvalReport run_experiment(const ExperimentConfig& config, const Dataset& ds, const RunOptions& options) {
  config.validate();
  validate(ds);
  EvalReport report;
  report.code_version = std::string(kVersion);
  report.master_seed = config.seed;
  report.config = config.to_json();
  report.config_hash = config_hash(report.config);

  std::vector<RepeatOutput> outputs(config.repeats);
  std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, config.repeats);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < config.repeats; i = next++)
      outputs[i] = RepeatRunner(config, ds, i, options, log_mutex).run();
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (auto& o : outputs) {
    report.repeats.push_back(o.record);
    report.metrics.insert(report.metrics.end(), o.metrics.begin(), o.metrics.end());
  }
  summarize(report);
  return report;
}

EvalReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  return run_experiment(config, experiment_dataset(config), options);
}

}  // namespace nfembed
