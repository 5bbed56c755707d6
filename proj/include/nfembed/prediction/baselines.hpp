#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/datamodel/labels.hpp"
#include "nfembed/numerics/ops.hpp"
#include "nfembed/prediction/classifier.hpp"

namespace nfembed {

// --- fMRI statistics -------------------------------------------------------

/// Spatial mean and standard deviation of every frame, laid out as
/// (sequence, statistic, t) with the M passive runs before the M active runs.
/// For equal run lengths this is the (2M, 2, T) statistics tensor, flattened.
std::vector<double> fmri_stats_features(const SubjectSequences& seq, std::size_t runs);

/// Shape (2M, channels, T) of a pooled feature tensor; throws DimensionError
/// when passive and active runs differ in length.
std::array<std::size_t, 3> pooled_shape(const DatasetLayout& layout, std::size_t channels);

/// Stacks per-subject feature vectors into rows.
Tensor stack_features(std::span<const std::vector<double>> rows);

// --- fMRI CNN --------------------------------------------------------------

struct CnnConfig {
  std::size_t filters = 10;
  std::size_t hidden1 = 140;
  std::size_t hidden2 = 64;
  std::size_t epochs = 60;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
};

/// One 3x3x3 convolution (zero padding, stride 1) with ReLU, spatial mean
/// pooling to one value per filter and frame, then a three-layer MLP head per
/// trait on the pooled (frames x filters) tensor. The convolution is shared by
/// all heads.
class FmriCnn {
 public:
  FmriCnn() = default;
  /// Throws ConfigError when a frame axis is shorter than the kernel.
  FmriCnn(Volume volume, std::size_t frames, std::span<const TraitTargets> targets, const CnnConfig& config, Rng& rng);

  Volume volume() const noexcept { return volume_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t filters() const noexcept { return conv_w_.value.rows(); }
  std::size_t heads() const noexcept { return heads_.size(); }
  Trait head_trait(std::size_t h) const { return heads_[h].trait; }

  /// Pooled features [subjects x frames*filters]; `frames` rows per subject.
  Var pooled(Tape& tape, const Tensor& frames);
  Var logits(Tape& tape, Var pooled, std::size_t head);
  /// Mean cross entropy summed over heads plus 0.5 * weight_decay * |W|^2.
  Var loss(Tape& tape, const Tensor& frames, std::span<const TraitTargets> targets, double weight_decay);

  /// Argmax labels [head][subject], ties to the lowest class.
  std::vector<std::vector<int>> predict(const Tensor& frames);

  std::vector<Parameter*> parameters();

 private:
  struct Head {
    Trait trait;
    Parameter w1, b1, w2, b2, w3, b3;
  };
  Volume volume_{};
  std::size_t frames_ = 0;
  Parameter conv_w_, conv_b_;
  std::vector<Head> heads_;
};

/// Frames of all subjects stacked [subjects*frames x V]: passive runs, then active.
Tensor cnn_frames(std::span<const SubjectSequences> subjects);

/// Full-batch Adam on the summed head losses.
FmriCnn train_fmri_cnn(Volume volume, std::span<const SubjectSequences> train, std::span<const TraitTargets> targets,
                       const CnnConfig& config);

// --- clinical SVR ----------------------------------------------------------

struct SvrConfig {
  double epsilon = 0.1;
  double c = 1.0;
  std::size_t epochs = 2000;
  double lr = 0.05;
};

/// max(0, |r| - epsilon) and its subgradient with respect to r.
double epsilon_insensitive(double residual, double epsilon);
double epsilon_insensitive_grad(double residual, double epsilon);

/// Linear epsilon-SVR on standardized inputs and targets:
/// 0.5 |w|^2 + C sum_i max(0, |w.x_i + b - y_i| - epsilon), minimized by
/// full-batch subgradient descent with step lr / sqrt(t); the best iterate is kept.
class LinearSvr {
 public:
  static LinearSvr fit(const Tensor& x, std::span<const double> y, const SvrConfig& config = {});
  double predict(std::span<const double> x) const;
  const std::vector<double>& weights() const noexcept { return w_; }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
  std::vector<double> x_mean_, x_scale_;
  double y_mean_ = 0.0, y_scale_ = 1.0;
};

struct ClinicalPrediction {
  std::vector<Trait> predictors;
  std::vector<double> values;  // raw predicted trait values, test order
  std::vector<int> labels;     // quantized with the target's training bins
};

/// Predicts `target` from the other trait columns that every train and test
/// subject carries. Throws ConfigError when the target is missing for all
/// training subjects or no predictor column remains.
ClinicalPrediction clinical_svr(std::span<const TraitRecord> train, std::span<const TraitRecord> test, Trait target,
                                const TraitLabeler& labeler, const SvrConfig& config = {});

}  // namespace nfembed
