#include "nfembed/prediction/classifier.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "nfembed/errors.hpp"
#include "nfembed/numerics/ops.hpp"
#include "nfembed/numerics/optimizer.hpp"

namespace nfembed {
namespace {

struct Standardizer {
  std::vector<double> mean, scale;
};

Standardizer fit_standardizer(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  if (n == 0) return s;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.at(r, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double v = 0;
    for (std::size_t r = 0; r < n; ++r) v += (x.at(r, j) - s.mean[j]) * (x.at(r, j) - s.mean[j]);
    const double sd = std::sqrt(v / static_cast<double>(n));
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Tensor standardize(const Tensor& x, const Standardizer& s) {
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(r, j) = (x.at(r, j) - s.mean[j]) / s.scale[j];
  return out;
}

LinearHead train_head(const Tensor& x, const TraitTargets& target, const ClassifierConfig& cfg) {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t r = 0; r < target.labels.size(); ++r) {
    const int y = target.labels[r];
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= target.classes)
      throw LabelError("trait " + std::string(trait_name(target.trait)) + ": label " + std::to_string(y) +
                       " outside [0, " + std::to_string(target.classes) + ")");
    rows.push_back(r);
    labels.push_back(y);
  }
  if (rows.empty()) throw ConfigError("trait " + std::string(trait_name(target.trait)) + ": no labelled subjects");

  const std::size_t d = x.cols(), c = target.classes;
  Tensor xs({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), xs.row(i).begin());
  }
  const Standardizer st = fit_standardizer(xs);
  const Tensor z = standardize(xs, st);

  Parameter w("w", Tensor({c, d})), b("b", Tensor({c}));
  auto opt = Optimizer::adam({.lr = cfg.lr});
  opt.add(w);
  opt.add(b);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    tape.backward(head_loss(tape.parameter(w), tape.parameter(b), z, labels, cfg.weight_decay));
    opt.step();
    opt.zero_grad();
  }

  // logits = W ((e - m) / s) + b  =  G^T e + b'
  LinearHead h{target.trait, Tensor({d, c}), b.value};
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < d; ++j) {
      const double gj = w.value.at(k, j) / st.scale[j];
      h.g.at(j, k) = gj;
      h.b[k] -= gj * st.mean[j];
    }
  return h;
}

}  // namespace

std::vector<double> LinearHead::logits(std::span<const double> e) const {
  std::vector<double> out(b.values().begin(), b.values().end());
  for (std::size_t j = 0; j < e.size(); ++j)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += g.at(j, k) * e[j];
  return out;
}

LinearClassifier::LinearClassifier(std::size_t dim, std::vector<LinearHead> heads) : dim_(dim), heads_(std::move(heads)) {
  for (const auto& h : heads_)
    if (h.g.rows() != dim_ || h.g.cols() != h.b.size())
      throw DimensionError("classifier head " + std::string(trait_name(h.trait)) + ": G " + shape_string(h.g.shape()) +
                           ", b " + shape_string(h.b.shape()) + ", input width " + std::to_string(dim_));
}

const LinearHead& LinearClassifier::head(Trait t) const {
  for (const auto& h : heads_)
    if (h.trait == t) return h;
  throw LookupError("classifier has no head for trait " + std::string(trait_name(t)));
}

ModelBundle LinearClassifier::to_bundle() const {
  ModelBundle out;
  auto traits = nlohmann::json::array();
  for (const auto& h : heads_) {
    const std::string name(trait_name(h.trait));
    out.add("rho." + name + ".g", h.g);
    out.add("rho." + name + ".b", h.b);
    traits.push_back(name);
  }
  out.meta = {{"kind", "classifier"}, {"dim", dim_}, {"traits", traits}};
  return out;
}

LinearClassifier LinearClassifier::from_bundle(const ModelBundle& b) {
  if (b.kind() != "classifier") throw FormatError("bundle kind '" + b.kind() + "' is not a classifier", 0);
  std::vector<LinearHead> heads;
  for (const auto& name : b.meta.at("traits")) {
    const std::string n = name.get<std::string>();
    heads.push_back({parse_trait(n), b.tensor("rho." + n + ".g"), b.tensor("rho." + n + ".b")});
  }
  return LinearClassifier(b.meta.at("dim").get<std::size_t>(), std::move(heads));
}

Var head_loss(Var w, Var b, const Tensor& x, std::span<const int> labels, double weight_decay) {
  Tape& tape = w.tape();
  const Var logits = ops::affine(tape.constant_ref(x), w, b);
  Var loss = ops::scale(ops::cross_entropy(logits, labels), 1.0 / static_cast<double>(labels.size()));
  if (weight_decay > 0) loss = ops::add(loss, ops::scale(ops::sum(ops::mul(w, w)), 0.5 * weight_decay));
  return loss;
}

LinearClassifier train_classifier(const Tensor& x, std::span<const TraitTargets> targets,
                                  const ClassifierConfig& config) {
  std::vector<LinearHead> heads;
  for (const auto& t : targets) {
    if (t.labels.size() != x.rows())
      throw DimensionError("classifier: " + std::to_string(t.labels.size()) + " labels for " +
                           std::to_string(x.rows()) + " inputs (trait " + std::string(trait_name(t.trait)) + ")");
    heads.push_back(train_head(x, t, config));
  }
  return LinearClassifier(x.cols(), std::move(heads));
}

std::vector<TraitPrediction> predict_traits(const LinearClassifier& classifier, std::span<const double> e) {
  if (e.size() != classifier.dim())
    throw DimensionError("classifier: input width " + std::to_string(e.size()) + ", expected " +
                         std::to_string(classifier.dim()));
  std::vector<TraitPrediction> out;
  for (const auto& h : classifier.heads()) {
    const auto z = h.logits(e);
    int best = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
      if (z[k] > z[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    out.push_back({h.trait, best, ops::softmax(z)});
  }
  return out;
}

int modal_label(std::span<const int> labels) {
  std::vector<std::size_t> count;
  for (int y : labels) {
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= count.size()) count.resize(static_cast<std::size_t>(y) + 1, 0);
    ++count[static_cast<std::size_t>(y)];
  }
  if (count.empty()) throw DataError("dummy baseline: no labels");
  int best = 0;
  for (std::size_t k = 1; k < count.size(); ++k)
    if (count[k] > count[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size())
    throw DimensionError("accuracy: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;
    ++n;
    hit += truth[i] == predicted[i];
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::string predictions_csv(std::span<const PredictionRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "subject_id,trait,true_label,predicted_label,scores\n";
  for (const auto& r : rows) {
    os << r.subject_id << ',' << trait_name(r.trait) << ',';
    if (r.truth >= 0) os << r.truth;
    os << ',' << r.predicted << ',';
    for (std::size_t k = 0; k < r.scores.size(); ++k) os << (k ? " " : "") << r.scores[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace nfembed
