#pragma once

#include <functional>
#include <string>

#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/eval/config.hpp"
#include "nfembed/eval/report.hpp"

namespace nfembed {

struct RunOptions {
  /// Repeats run in parallel on up to this many threads; 0 uses the hardware
  /// concurrency. Repeat seeds are derived, so the report does not depend on it.
  std::size_t threads = 1;
  /// Receives "repeat <i>: <stage>" lines; called from worker threads under a lock.
  std::function<void(const std::string&)> progress;
};

/// Seed of repeat `index`, and the per-stage seeds derived from it.
std::uint64_t repeat_seed(std::uint64_t master, std::size_t index);

/// Repeated random splits of `ds`. Per repeat: split, train the translator,
/// both LSTMs, fit test embeddings with the network frozen, train the trait
/// classifier on training embeddings and the baselines, then score every
/// method on the test subjects. Sections: one per cohort present, plus
/// "pooled". A failing stage aborts only its repeat, which the report marks.
EvalReport run_experiment(const ExperimentConfig& config, const Dataset& ds, const RunOptions& options = {});
/// Loads `config.dataset`, or generates from `config.generator` when empty.
EvalReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

Dataset experiment_dataset(const ExperimentConfig& config);

}  // namespace nfembed
