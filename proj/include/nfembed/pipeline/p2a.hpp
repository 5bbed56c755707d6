#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/numerics/ops.hpp"
#include "nfembed/pipeline/bundle.hpp"

namespace nfembed {

/// Normalized sequences of one subject plus the run count needed to pair
/// active steps with passive frames.
struct PreparedSubject {
  std::string id;
  SubjectSequences seq;
  std::size_t runs = 1;

  std::size_t passive_len() const { return seq.passive.rows() / runs; }
  std::size_t active_len() const { return seq.active.rows() / runs; }
  /// Passive row paired with active row `row` (same run, step mod T).
  std::size_t passive_row(std::size_t row) const;
};

std::vector<PreparedSubject> prepare_subjects(const Dataset& ds, std::span<const std::string> ids);

/// Passive-to-active translator: eight affine layers widening to 8F and back
/// to F, with Dropout/ReLU alternating between them and a linear output.
class P2ATranslator {
 public:
  static constexpr std::size_t kLayers = 8;
  static constexpr int kWidthFactor[kLayers + 1] = {1, 2, 3, 4, 8, 4, 3, 2, 1};

  P2ATranslator() = default;
  P2ATranslator(std::size_t frame_size, double dropout, Rng& rng);
  static P2ATranslator zeros(std::size_t frame_size, double dropout = 0.2);

  std::size_t frame_size() const noexcept { return f_; }
  double dropout() const noexcept { return dropout_; }

  /// x: [n x F] or [F]. Throws DimensionError on width mismatch.
  Var forward(Tape& tape, Var x, Mode mode, Rng& rng);
  /// Eval-mode forward without a tape.
  Tensor apply(const Tensor& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  ModelBundle to_bundle() const;
  static P2ATranslator from_bundle(const ModelBundle& b);

 private:
  std::size_t f_ = 0;
  double dropout_ = 0.2;
  std::vector<Parameter> w_;
  std::vector<Parameter> b_;
};

struct P2ATrainConfig {
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double dropout = 0.2;
  std::uint64_t seed = 0;
};

struct P2ATrainResult {
  P2ATranslator model;
  std::vector<double> train_loss;  // per epoch, mean over frames
  std::vector<double> eval_loss;   // index 0 is the untrained model
  std::size_t best_epoch = 0;
};

/// Minimizes the squared reconstruction error of active frames from their
/// paired passive frames and returns the best eval-loss checkpoint. Subject
/// identity is never read. Empty `train` throws ConfigError; an empty `eval`
/// checkpoints on the training loss instead.
P2ATrainResult train_p2a(std::span<const PreparedSubject> train, std::span<const PreparedSubject> eval,
                         const P2ATrainConfig& config);

/// Mean over frames of the summed squared error of phi(p) against a.
double p2a_loss(const P2ATranslator& model, std::span<const PreparedSubject> subjects);

}  // namespace nfembed
