#pragma once

#include <span>
#include <string>
#include <vector>

#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/numerics/tape.hpp"
#include "nfembed/pipeline/bundle.hpp"

namespace nfembed {

/// Class labels of one trait for a list of subjects; -1 marks a missing label.
struct TraitTargets {
  Trait trait = Trait::tas20;
  std::size_t classes = 5;
  std::vector<int> labels;
};

struct ClassifierConfig {
  std::size_t epochs = 500;
  double lr = 0.05;
  double weight_decay = 1e-3;
};

/// One affine softmax head: scores = G^T e + b.
struct LinearHead {
  Trait trait = Trait::tas20;
  Tensor g;  // [dim x classes]
  Tensor b;  // [classes]

  std::size_t classes() const { return b.size(); }
  std::vector<double> logits(std::span<const double> e) const;
};

struct TraitPrediction {
  Trait trait = Trait::tas20;
  int label = 0;
  std::vector<double> scores;  // softmax probabilities
};

/// Independent linear heads over a shared input, one per trait.
class LinearClassifier {
 public:
  LinearClassifier() = default;
  LinearClassifier(std::size_t dim, std::vector<LinearHead> heads);

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<LinearHead>& heads() const noexcept { return heads_; }
  /// Throws LookupError when no head predicts `t`.
  const LinearHead& head(Trait t) const;

  ModelBundle to_bundle() const;
  static LinearClassifier from_bundle(const ModelBundle& b);

 private:
  std::size_t dim_ = 0;
  std::vector<LinearHead> heads_;
};

/// Mean cross entropy over the rows plus 0.5 * weight_decay * |W|^2, for a
/// head with weights W [classes x dim] and bias [classes].
Var head_loss(Var w, Var b, const Tensor& x, std::span<const int> labels, double weight_decay);

/// Trains one head per target on standardized inputs by full-batch Adam and
/// folds the standardization back into G and b. Rows with a missing label are
/// skipped for that head. Throws DimensionError when label counts disagree
/// with the rows of `x`, ConfigError for a target without any label.
LinearClassifier train_classifier(const Tensor& x, std::span<const TraitTargets> targets,
                                  const ClassifierConfig& config = {});

/// Argmax per head, ties to the lowest class. Throws DimensionError when the
/// input width differs from the classifier's.
std::vector<TraitPrediction> predict_traits(const LinearClassifier& classifier, std::span<const double> e);

/// Most frequent label, ties to the lower index; -1 entries are ignored.
/// Throws DataError without any label.
int modal_label(std::span<const int> labels);

/// Share of labelled positions where prediction equals truth; NaN if none.
double accuracy(std::span<const int> truth, std::span<const int> predicted);

struct PredictionRow {
  std::string subject_id;
  Trait trait = Trait::tas20;
  int truth = -1;
  int predicted = 0;
  std::vector<double> scores;
};

/// CSV with header subject_id,trait,true_label,predicted_label,scores; scores
/// are space separated.
std::string predictions_csv(std::span<const PredictionRow> rows);

}  // namespace nfembed
