#include "nfembed/pipeline/p2a.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "nfembed/errors.hpp"
#include "nfembed/numerics/init.hpp"
#include "nfembed/numerics/optimizer.hpp"

namespace nfembed {
namespace {

// Separator after layer i: odd positions (0-based even index) are dropout.
bool separator_is_dropout(std::size_t i) { return i % 2 == 0; }

struct Pairs {
  Tensor passive;  // [n x F]
  Tensor active;   // [n x F]
};

Pairs collect_pairs(std::span<const PreparedSubject> subjects) {
  std::size_t n = 0, f = 0;
  for (const auto& s : subjects) n += s.seq.active.rows(), f = s.seq.active.cols();
  Pairs p{Tensor({n, f}), Tensor({n, f})};
  std::size_t row = 0;
  for (const auto& s : subjects)
    for (std::size_t r = 0; r < s.seq.active.rows(); ++r, ++row) {
      const auto src = s.seq.passive.row(s.passive_row(r));
      std::copy(src.begin(), src.end(), p.passive.row(row).begin());
      const auto dst = s.seq.active.row(r);
      std::copy(dst.begin(), dst.end(), p.active.row(row).begin());
    }
  return p;
}

double mean_frame_loss(const Tensor& pred, const Tensor& target) {
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return pred.rows() ? s / static_cast<double>(pred.rows()) : 0.0;
}

}  // namespace

std::size_t PreparedSubject::passive_row(std::size_t row) const {
  const std::size_t ta = active_len(), t = passive_len();
  return (row / ta) * t + (row % ta) % t;
}

std::vector<PreparedSubject> prepare_subjects(const Dataset& ds, std::span<const std::string> ids) {
  std::vector<PreparedSubject> out;
  out.reserve(ids.size());
  for (const auto& id : ids)
    out.push_back({id, prepared_sequences(ds.layout, ds.subject(id)), ds.layout.runs});
  return out;
}

P2ATranslator::P2ATranslator(std::size_t frame_size, double dropout, Rng& rng) : f_(frame_size), dropout_(dropout) {
  if (frame_size == 0) throw ConfigError("P2A translator: frame size must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("P2A translator: dropout must lie in [0, 1)");
  for (std::size_t i = 0; i < kLayers; ++i) {
    const std::size_t in = f_ * static_cast<std::size_t>(kWidthFactor[i]);
    const std::size_t out = f_ * static_cast<std::size_t>(kWidthFactor[i + 1]);
    w_.emplace_back("p2a.w" + std::to_string(i), init::fan_in_uniform({out, in}, in, rng));
    b_.emplace_back("p2a.b" + std::to_string(i), init::fan_in_uniform({out}, in, rng));
  }
}

P2ATranslator P2ATranslator::zeros(std::size_t frame_size, double dropout) {
  Rng rng(0);
  P2ATranslator m(frame_size, dropout, rng);
  for (auto* p : m.parameters()) p->value.fill(0.0);
  return m;
}

Var P2ATranslator::forward(Tape& tape, Var x, Mode mode, Rng& rng) {
  if (x.value().cols() != f_)
    throw DimensionError("P2A forward: input width " + std::to_string(x.value().cols()) + ", model expects " +
                         std::to_string(f_));
  Var h = x;
  for (std::size_t i = 0; i < kLayers; ++i) {
    h = ops::affine(h, tape.parameter(w_[i]), tape.parameter(b_[i]));
    if (i + 1 == kLayers) break;
    h = separator_is_dropout(i) ? ops::dropout(h, dropout_, mode, rng) : ops::relu(h);
  }
  return h;
}

Tensor P2ATranslator::apply(const Tensor& x) const {
  if (x.cols() != f_)
    throw DimensionError("P2A forward: input width " + std::to_string(x.cols()) + ", model expects " +
                         std::to_string(f_));
  Tensor h = x;
  for (std::size_t i = 0; i < kLayers; ++i) {
    h = ops::linear(h, w_[i].value, &b_[i].value);
    if (i + 1 < kLayers && !separator_is_dropout(i))
      for (double& v : h.values()) v = std::max(v, 0.0);
  }
  return h;
}

std::vector<Parameter*> P2ATranslator::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < w_.size(); ++i) out.push_back(&w_[i]), out.push_back(&b_[i]);
  return out;
}

std::vector<const Parameter*> P2ATranslator::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t i = 0; i < w_.size(); ++i) out.push_back(&w_[i]), out.push_back(&b_[i]);
  return out;
}

ModelBundle P2ATranslator::to_bundle() const {
  ModelBundle b;
  for (const Parameter* p : parameters()) b.add(p->name, p->value);
  b.meta = {{"kind", "p2a"}, {"frame_size", f_}, {"dropout", dropout_}};
  return b;
}

P2ATranslator P2ATranslator::from_bundle(const ModelBundle& b) {
  if (b.kind() != "p2a") throw FormatError("bundle kind '" + b.kind() + "' is not a p2a translator", 0);
  auto m = zeros(b.meta.at("frame_size").get<std::size_t>(), b.meta.at("dropout").get<double>());
  const auto params = m.parameters();
  load_parameters(b, params);
  return m;
}

double p2a_loss(const P2ATranslator& model, std::span<const PreparedSubject> subjects) {
  if (subjects.empty()) return 0.0;
  const auto pairs = collect_pairs(subjects);
  return mean_frame_loss(model.apply(pairs.passive), pairs.active);
}

P2ATrainResult train_p2a(std::span<const PreparedSubject> train, std::span<const PreparedSubject> eval,
                         const P2ATrainConfig& config) {
  if (train.empty()) throw ConfigError("train_p2a: empty training set");
  if (config.batch_size == 0) throw ConfigError("train_p2a: batch_size must be positive");
  const auto data = collect_pairs(train);
  const auto held = eval.empty() ? Pairs{} : collect_pairs(eval);
  const std::size_t f = data.passive.cols();

  SeedStream seeds(config.seed);
  Rng init_rng(seeds.child(1)), order_rng(seeds.child(2)), dropout_rng(seeds.child(3));
  P2ATrainResult result{P2ATranslator(f, config.dropout, init_rng), {}, {}, 0};
  auto& model = result.model;
  auto params = model.parameters();
  auto opt = Optimizer::adam({.lr = config.lr});
  opt.add(params);

  auto score = [&] {
    return eval.empty() ? mean_frame_loss(model.apply(data.passive), data.active)
                        : mean_frame_loss(model.apply(held.passive), held.active);
  };
  double best = score();
  result.eval_loss.push_back(best);
  std::vector<Tensor> best_values;
  for (auto* p : params) best_values.push_back(p->value);

  const std::size_t n = data.passive.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double total = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t m = std::min(config.batch_size, n - start);
      Tensor xb({m, f}), yb({m, f});
      for (std::size_t i = 0; i < m; ++i) {
        const auto px = data.passive.row(order[start + i]);
        const auto ay = data.active.row(order[start + i]);
        std::copy(px.begin(), px.end(), xb.row(i).begin());
        std::copy(ay.begin(), ay.end(), yb.row(i).begin());
      }
      Tape tape;
      const Var pred = model.forward(tape, tape.constant(std::move(xb)), Mode::train, dropout_rng);
      const Var sse = ops::squared_l2(pred, tape.constant(std::move(yb)));
      total += sse.value()[0];
      tape.backward(ops::scale(sse, 1.0 / static_cast<double>(m)));
      opt.step();
      opt.zero_grad();
    }
    result.train_loss.push_back(total / static_cast<double>(n));
    const double current = score();
    result.eval_loss.push_back(current);
    if (current < best) {
      best = current;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->value;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  return result;
}

}  // namespace nfembed
