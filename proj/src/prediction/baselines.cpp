#include "nfembed/prediction/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nfembed/errors.hpp"
#include "nfembed/numerics/init.hpp"
#include "nfembed/numerics/optimizer.hpp"

namespace nfembed {
namespace {

void append_stats(const Tensor& frames, std::vector<double>& out, std::size_t runs) {
  if (runs == 0 || frames.rows() % runs) throw DimensionError("fmri stats: frames do not split into runs");
  const std::size_t len = frames.rows() / runs, v = frames.cols();
  for (std::size_t m = 0; m < runs; ++m) {
    std::vector<double> mean(len), sd(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = frames.row(m * len + t);
      double s = 0;
      for (double x : row) s += x;
      const double mu = s / static_cast<double>(v);
      double q = 0;
      for (double x : row) q += (x - mu) * (x - mu);
      mean[t] = mu;
      sd[t] = std::sqrt(q / static_cast<double>(v));
    }
    out.insert(out.end(), mean.begin(), mean.end());
    out.insert(out.end(), sd.begin(), sd.end());
  }
}

}  // namespace

std::vector<double> fmri_stats_features(const SubjectSequences& seq, std::size_t runs) {
  std::vector<double> out;
  out.reserve(2 * (seq.passive.rows() + seq.active.rows()));
  append_stats(seq.passive, out, runs);
  append_stats(seq.active, out, runs);
  return out;
}

std::array<std::size_t, 3> pooled_shape(const DatasetLayout& layout, std::size_t channels) {
  if (layout.passive_len != layout.active_len)
    throw DimensionError("pooled tensor needs equal run lengths, have " + std::to_string(layout.passive_len) +
                         " and " + std::to_string(layout.active_len));
  return {2 * std::size_t{layout.runs}, channels, layout.passive_len};
}

Tensor stack_features(std::span<const std::vector<double>> rows) {
  if (rows.empty()) return Tensor({0, 0});
  Tensor out({rows.size(), rows.front().size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != out.cols())
      throw DimensionError("features: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                           " values, expected " + std::to_string(out.cols()));
    std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
  }
  return out;
}

// --- CNN ---

FmriCnn::FmriCnn(Volume volume, std::size_t frames, std::span<const TraitTargets> targets, const CnnConfig& config,
                 Rng& rng)
    : volume_(volume), frames_(frames) {
  if (volume.h < 3 || volume.w < 3 || volume.d < 3)
    throw ConfigError("fmri_cnn: frame " + std::to_string(volume.h) + "x" + std::to_string(volume.w) + "x" +
                      std::to_string(volume.d) + " is smaller than the 3x3x3 kernel");
  if (config.filters == 0 || frames == 0) throw ConfigError("fmri_cnn: filters and frames must be positive");
  const std::size_t k = config.filters, in = frames * k;
  conv_w_ = Parameter("cnn.conv_w", init::fan_in_uniform({k, 27}, 27, rng));
  conv_b_ = Parameter("cnn.conv_b", init::fan_in_uniform({k}, 27, rng));
  for (const auto& t : targets) {
    const std::string p = "cnn." + std::string(trait_name(t.trait)) + ".";
    const std::size_t h1 = config.hidden1, h2 = config.hidden2, c = t.classes;
    heads_.push_back({t.trait, Parameter(p + "w1", init::fan_in_uniform({h1, in}, in, rng)),
                      Parameter(p + "b1", init::fan_in_uniform({h1}, in, rng)),
                      Parameter(p + "w2", init::fan_in_uniform({h2, h1}, h1, rng)),
                      Parameter(p + "b2", init::fan_in_uniform({h2}, h1, rng)),
                      Parameter(p + "w3", init::fan_in_uniform({c, h2}, h2, rng)),
                      Parameter(p + "b3", init::fan_in_uniform({c}, h2, rng))});
  }
}

Var FmriCnn::pooled(Tape& tape, const Tensor& frames) {
  if (frames.cols() != volume_.voxels() || frames.rows() % frames_)
    throw DimensionError("fmri_cnn: frames " + shape_string(frames.shape()) + ", expected rows in multiples of " +
                         std::to_string(frames_) + " and " + std::to_string(volume_.voxels()) + " voxels");
  const Var conv = ops::relu(
      ops::conv3d_same(tape.constant_ref(frames), volume_, tape.parameter(conv_w_), tape.parameter(conv_b_)));
  const Var per_frame = ops::mean_pool_blocks(conv, volume_.voxels());  // [n*frames x k]
  return ops::reshape(per_frame, {frames.rows() / frames_, frames_ * filters()});
}

Var FmriCnn::logits(Tape& tape, Var pooled, std::size_t head) {
  Head& h = heads_.at(head);
  Var z = ops::relu(ops::affine(pooled, tape.parameter(h.w1), tape.parameter(h.b1)));
  z = ops::relu(ops::affine(z, tape.parameter(h.w2), tape.parameter(h.b2)));
  return ops::affine(z, tape.parameter(h.w3), tape.parameter(h.b3));
}

Var FmriCnn::loss(Tape& tape, const Tensor& frames, std::span<const TraitTargets> targets, double weight_decay) {
  if (targets.size() != heads_.size())
    throw DimensionError("fmri_cnn: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(heads_.size()) + " heads");
  const Var z = pooled(tape, frames);
  const std::size_t n = frames.rows() / frames_;
  Var total;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (targets[h].labels.size() != n) throw DimensionError("fmri_cnn: label count differs from subject count");
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t r = 0; r < n; ++r)
      if (targets[h].labels[r] >= 0) rows.push_back(r), labels.push_back(targets[h].labels[r]);
    if (rows.empty()) continue;
    const Var logit = logits(tape, ops::gather_rows(z, rows), h);
    Var l = ops::scale(ops::cross_entropy(logit, labels), 1.0 / static_cast<double>(rows.size()));
    if (weight_decay > 0) {
      Head& hd = heads_[h];
      for (Parameter* w : {&hd.w1, &hd.w2, &hd.w3}) {
        const Var wv = tape.parameter(*w);
        l = ops::add(l, ops::scale(ops::sum(ops::mul(wv, wv)), 0.5 * weight_decay));
      }
    }
    total = total.valid() ? ops::add(total, l) : l;
  }
  if (!total.valid()) throw ConfigError("fmri_cnn: no labelled subjects");
  return total;
}

std::vector<std::vector<int>> FmriCnn::predict(const Tensor& frames) {
  Tape tape;
  const Var z = pooled(tape, frames);
  std::vector<std::vector<int>> out;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const Tensor& l = logits(tape, z, h).value();
    std::vector<int> labels(l.rows());
    for (std::size_t r = 0; r < l.rows(); ++r) {
      const auto row = l.row(r);
      labels[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    out.push_back(std::move(labels));
  }
  return out;
}

std::vector<Parameter*> FmriCnn::parameters() {
  std::vector<Parameter*> out{&conv_w_, &conv_b_};
  for (auto& h : heads_)
    for (Parameter* p : {&h.w1, &h.b1, &h.w2, &h.b2, &h.w3, &h.b3}) out.push_back(p);
  return out;
}

Tensor cnn_frames(std::span<const SubjectSequences> subjects) {
  std::vector<Tensor> parts;
  for (const auto& s : subjects) {
    parts.push_back(s.passive);
    parts.push_back(s.active);
  }
  return vstack(parts);
}

FmriCnn train_fmri_cnn(Volume volume, std::span<const SubjectSequences> train, std::span<const TraitTargets> targets,
                       const CnnConfig& config) {
  if (train.empty()) throw ConfigError("fmri_cnn: empty training set");
  Rng rng(config.seed);
  const std::size_t frames = train.front().passive.rows() + train.front().active.rows();
  FmriCnn model(volume, frames, targets, config, rng);
  const Tensor x = cnn_frames(train);
  auto params = model.parameters();
  auto opt = Optimizer::adam({.lr = config.lr});
  opt.add(params);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tape tape;
    tape.backward(model.loss(tape, x, targets, config.weight_decay));
    opt.step();
    opt.zero_grad();
  }
  return model;
}

// --- SVR ---

double epsilon_insensitive(double residual, double epsilon) { return std::max(0.0, std::abs(residual) - epsilon); }

double epsilon_insensitive_grad(double residual, double epsilon) {
  if (residual > epsilon) return 1.0;
  if (residual < -epsilon) return -1.0;
  return 0.0;
}

LinearSvr LinearSvr::fit(const Tensor& x, std::span<const double> y, const SvrConfig& config) {
  const std::size_t n = x.rows(), d = x.cols();
  if (y.size() != n) throw DimensionError("svr: " + std::to_string(y.size()) + " targets for " + std::to_string(n) + " rows");
  if (n == 0) throw ConfigError("svr: no training rows");
  LinearSvr m;
  m.x_mean_.assign(d, 0.0);
  m.x_scale_.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0, q = 0;
    for (std::size_t r = 0; r < n; ++r) s += x.at(r, j);
    const double mu = s / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) q += (x.at(r, j) - mu) * (x.at(r, j) - mu);
    const double sd = std::sqrt(q / static_cast<double>(n));
    m.x_mean_[j] = mu;
    m.x_scale_[j] = sd > 1e-12 ? sd : 1.0;
  }
  double ys = 0, yq = 0;
  for (double v : y) ys += v;
  m.y_mean_ = ys / static_cast<double>(n);
  for (double v : y) yq += (v - m.y_mean_) * (v - m.y_mean_);
  const double ysd = std::sqrt(yq / static_cast<double>(n));
  m.y_scale_ = ysd > 1e-12 ? ysd : 1.0;

  Tensor z({n, d});
  std::vector<double> t(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) z.at(r, j) = (x.at(r, j) - m.x_mean_[j]) / m.x_scale_[j];
    t[r] = (y[r] - m.y_mean_) / m.y_scale_;
  }

  std::vector<double> w(d, 0.0), gw(d);
  double b = 0;
  auto objective = [&](std::span<const double> wv, double bv, std::vector<double>* resid) {
    double reg = 0, loss = 0;
    for (double v : wv) reg += v * v;
    for (std::size_t r = 0; r < n; ++r) {
      double p = bv;
      for (std::size_t j = 0; j < d; ++j) p += wv[j] * z.at(r, j);
      const double e = p - t[r];
      if (resid) (*resid)[r] = e;
      loss += epsilon_insensitive(e, config.epsilon);
    }
    return 0.5 * reg + config.c * loss;
  };

  std::vector<double> resid(n);
  double best = objective(w, b, &resid);
  m.w_ = w;
  m.b_ = b;
  for (std::size_t step = 1; step <= config.epochs; ++step) {
    double gb = 0;
    for (std::size_t j = 0; j < d; ++j) gw[j] = w[j];
    for (std::size_t r = 0; r < n; ++r) {
      const double s = config.c * epsilon_insensitive_grad(resid[r], config.epsilon);
      if (s == 0) continue;
      gb += s;
      for (std::size_t j = 0; j < d; ++j) gw[j] += s * z.at(r, j);
    }
    const double lr = config.lr / std::sqrt(static_cast<double>(step));
    for (std::size_t j = 0; j < d; ++j) w[j] -= lr * gw[j];
    b -= lr * gb;
    const double obj = objective(w, b, &resid);
    if (obj < best) {
      best = obj;
      m.w_ = w;
      m.b_ = b;
    }
  }
  return m;
}

double LinearSvr::predict(std::span<const double> x) const {
  if (x.size() != w_.size())
    throw DimensionError("svr: input width " + std::to_string(x.size()) + ", expected " + std::to_string(w_.size()));
  double s = b_;
  for (std::size_t j = 0; j < w_.size(); ++j) s += w_[j] * (x[j] - x_mean_[j]) / x_scale_[j];
  return y_mean_ + y_scale_ * s;
}

ClinicalPrediction clinical_svr(std::span<const TraitRecord> train, std::span<const TraitRecord> test, Trait target,
                                const TraitLabeler& labeler, const SvrConfig& config) {
  ClinicalPrediction out;
  auto everyone_has = [&](Trait t) {
    for (const auto& r : train)
      if (!r.value(t)) return false;
    for (const auto& r : test)
      if (!r.value(t)) return false;
    return true;
  };
  for (Trait t : kAllTraits)
    if (t != target && everyone_has(t)) out.predictors.push_back(t);
  if (out.predictors.empty())
    throw ConfigError("clinical_svr: no predictor trait available for every subject (target " +
                      std::string(trait_name(target)) + ")");

  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (const auto& r : train) {
    const auto v = r.value(target);
    if (!v) continue;
    std::vector<double> row;
    for (Trait t : out.predictors) row.push_back(*r.value(t));
    rows.push_back(std::move(row));
    y.push_back(*v);
  }
  if (y.empty()) throw ConfigError("clinical_svr: target " + std::string(trait_name(target)) + " is missing for all training subjects");
  const auto svr = LinearSvr::fit(stack_features(rows), y, config);

  for (const auto& r : test) {
    std::vector<double> row;
    for (Trait t : out.predictors) row.push_back(*r.value(t));
    double v = svr.predict(row);
    out.values.push_back(v);
    if (target == Trait::nf_experience) v = std::clamp(v, 0.0, 2.0);
    out.labels.push_back(labeler.label(v));
  }
  return out;
}

}  // namespace nfembed
