#include "nfembed/pipeline/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nfembed/errors.hpp"
#include "nfembed/numerics/init.hpp"
#include "nfembed/numerics/optimizer.hpp"

namespace nfembed {
namespace {

void add_into(Tensor& y, const Tensor& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

// Broadcast the per-sequence rows of `per_row` onto every time step of z.
void add_rows_each_step(Tensor& z, const Tensor& per_row, std::size_t rows, std::size_t steps) {
  const std::size_t w = z.cols();
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < rows; ++b) {
      double* dst = z.data() + (t * rows + b) * w;
      const double* src = per_row.data() + b * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
}

Tensor gather(const Tensor& table, std::span<const std::size_t> index) {
  Tensor out({index.size(), table.cols()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto src = table.row(index[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// Gate nonlinearities on a pre-activation row block, in place: f, i, o
// sigmoid and u tanh.
void activate_gates(Tensor& z, std::size_t hidden) {
  const std::size_t w = 4 * hidden;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double* row = z.data() + r * w;
    for (std::size_t j = 0; j < w; ++j)
      row[j] = (j >= 2 * hidden && j < 3 * hidden) ? std::tanh(row[j]) : ops::sigmoid(row[j]);
  }
}

std::vector<Tensor> snapshot(std::span<Parameter* const> params) {
  std::vector<Tensor> out;
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(std::span<Parameter* const> params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

// Marks parameters frozen for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Parameter*> params) : params_(std::move(params)) {
    for (Parameter* p : params_) saved_.push_back(p->trainable), p->trainable = false;
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Parameter*> params_;
  std::vector<bool> saved_;
};

double batch_loss(const Tensor& pred, const Tensor& target) {
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.rows());
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

SubjectInputs build_inputs(const P2ATranslator& phi, const PreparedSubject& subject) {
  const Tensor& active = subject.seq.active;
  const std::size_t n = active.rows(), f = active.cols();
  if (n == 0) throw DataError("subject '" + subject.id + "': empty active sequence");
  const Tensor mapped = phi.apply(subject.seq.passive);
  SubjectInputs out{subject.id, Tensor({n, 2 * f}), active, subject.runs};
  for (std::size_t r = 0; r < n; ++r) {
    auto dst = out.inputs.row(r);
    const auto p = mapped.row(subject.passive_row(r));
    std::copy(p.begin(), p.end(), dst.begin());
    if (r > 0) {
      const auto a = active.row(r - 1);
      std::copy(a.begin(), a.end(), dst.begin() + static_cast<std::ptrdiff_t>(f));
    }
  }
  return out;
}

std::vector<SubjectInputs> build_inputs(const P2ATranslator& phi, std::span<const PreparedSubject> subjects) {
  std::vector<SubjectInputs> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(build_inputs(phi, s));
  return out;
}

SequenceBatch make_batch(std::span<const SubjectInputs> subjects, std::span<const std::size_t> which) {
  if (which.empty()) throw DataError("make_batch: no subjects");
  const auto& first = subjects[which.front()];
  const std::size_t steps = first.steps(), in = first.inputs.cols(), f = first.targets.cols();
  std::size_t rows = 0;
  for (std::size_t k : which) {
    const auto& s = subjects[k];
    if (s.steps() != steps || s.inputs.cols() != in || s.targets.cols() != f)
      throw DataError("make_batch: subject '" + s.id + "' differs in run length or frame width");
    rows += s.runs;
  }
  SequenceBatch b{rows, steps, Tensor({steps * rows, in}), Tensor({steps * rows, f}), {}};
  std::size_t seq = 0;
  for (std::size_t k : which) {
    const auto& s = subjects[k];
    for (std::size_t r = 0; r < s.runs; ++r, ++seq) {
      b.owner.push_back(k);
      for (std::size_t t = 0; t < steps; ++t) {
        const auto xi = s.inputs.row(r * steps + t);
        const auto yi = s.targets.row(r * steps + t);
        std::copy(xi.begin(), xi.end(), b.inputs.row(t * rows + seq).begin());
        std::copy(yi.begin(), yi.end(), b.targets.row(t * rows + seq).begin());
      }
    }
  }
  return b;
}

SequenceBatch make_batch(std::span<const SubjectInputs> subjects) {
  const auto idx = all_indices(subjects.size());
  return make_batch(subjects, idx);
}

std::string_view variant_name(LstmVariant v) { return v == LstmVariant::conditioned ? "conditioned" : "vanilla"; }

LstmVariant parse_variant(std::string_view name) {
  if (name == "conditioned") return LstmVariant::conditioned;
  if (name == "vanilla") return LstmVariant::vanilla;
  throw ConfigError("unknown LSTM variant '" + std::string(name) + "' (expected conditioned or vanilla)");
}

std::size_t LstmShape::gate_input_width() const {
  return input_width() + hidden + (variant == LstmVariant::conditioned ? embedding_dim : 0);
}

LstmPredictor::LstmPredictor(const LstmShape& shape, Rng& rng) : shape_(shape) {
  if (shape.frame_size == 0 || shape.hidden == 0) throw ConfigError("LSTM: frame size and hidden width must be positive");
  if (conditioned() && shape.embedding_dim == 0) throw ConfigError("LSTM: conditioned variant needs embedding_dim > 0");
  const std::size_t g = 4 * shape.hidden, fan = shape.gate_input_width();
  gx_ = Parameter("lstm.gates_x", init::fan_in_uniform({g, shape.input_width()}, fan, rng));
  gh_ = Parameter("lstm.gates_h", init::fan_in_uniform({g, shape.hidden}, fan, rng));
  if (conditioned()) ge_ = Parameter("lstm.gates_e", init::fan_in_uniform({g, shape.embedding_dim}, fan, rng));
  gb_ = Parameter("lstm.gates_b", init::fan_in_uniform({g}, fan, rng));
  rw_ = Parameter("lstm.readout_w", init::fan_in_uniform({shape.frame_size, shape.hidden}, shape.hidden, rng));
  rb_ = Parameter("lstm.readout_b", init::fan_in_uniform({shape.frame_size}, shape.hidden, rng));
}

LstmPredictor LstmPredictor::zeros(const LstmShape& shape) {
  Rng rng(0);
  LstmPredictor m(shape, rng);
  for (auto* p : m.parameters()) p->value.fill(0.0);
  return m;
}

void LstmPredictor::check_embeddings(const Tensor* e, std::size_t rows) const {
  if (!conditioned()) return;
  if (!e) throw DimensionError("conditioned LSTM: embedding required");
  if (e->cols() != shape_.embedding_dim || e->rows() != rows)
    throw DimensionError("conditioned LSTM: embedding " + shape_string(e->shape()) + ", expected " +
                         std::to_string(rows) + " rows of width " + std::to_string(shape_.embedding_dim));
}

GateValues LstmPredictor::gates(const Tensor& x, const Tensor& h_prev, const Tensor* e) const {
  const std::size_t R = shape_.hidden;
  if (x.cols() != shape_.input_width() || h_prev.cols() != R || h_prev.rows() != x.rows())
    throw DimensionError("LSTM cell: x " + shape_string(x.shape()) + ", h " + shape_string(h_prev.shape()) +
                         "; expected widths " + std::to_string(shape_.input_width()) + " and " + std::to_string(R));
  check_embeddings(e, x.rows());
  Tensor z = ops::linear(x, gx_.value, &gb_.value);
  add_into(z, ops::linear(h_prev, gh_.value));
  if (conditioned()) add_into(z, ops::linear(*e, ge_.value));
  activate_gates(z, R);
  const std::size_t n = z.rows();
  GateValues g{Tensor({n, R}), Tensor({n, R}), Tensor({n, R}), Tensor({n, R})};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < R; ++j) {
      g.f.at(r, j) = z.at(r, j);
      g.i.at(r, j) = z.at(r, R + j);
      g.u.at(r, j) = z.at(r, 2 * R + j);
      g.o.at(r, j) = z.at(r, 3 * R + j);
    }
  return g;
}

LstmStep LstmPredictor::cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const Tensor* e) const {
  if (c_prev.shape() != h_prev.shape())
    throw DimensionError("LSTM cell: c " + shape_string(c_prev.shape()) + " vs h " + shape_string(h_prev.shape()));
  const GateValues g = gates(x, h_prev, e);
  LstmStep s{Tensor(h_prev.shape()), Tensor(c_prev.shape())};
  for (std::size_t k = 0; k < s.c.size(); ++k) {
    s.c[k] = c_prev[k] * g.f[k] + g.u[k] * g.i[k];
    s.h[k] = g.o[k] * std::tanh(s.c[k]);
  }
  return s;
}

TapedStep LstmPredictor::step(Tape& tape, Var x, Var h_prev, Var c_prev, Var e) {
  const std::size_t R = shape_.hidden;
  if (x.shape().size() != 2 || x.shape()[1] != shape_.input_width() || h_prev.shape() != c_prev.shape() ||
      h_prev.shape()[1] != R)
    throw DimensionError("LSTM step: x " + shape_string(x.shape()) + ", h " + shape_string(h_prev.shape()) + ", c " +
                         shape_string(c_prev.shape()));
  Var z = ops::add(ops::affine(x, tape.parameter(gx_), tape.parameter(gb_)), ops::linear(h_prev, tape.parameter(gh_)));
  if (conditioned()) z = ops::add(z, ops::linear(e, tape.parameter(ge_)));
  const Var f = ops::sigmoid(ops::slice_cols(z, 0, R));
  const Var i = ops::sigmoid(ops::slice_cols(z, R, R));
  const Var u = ops::tanh(ops::slice_cols(z, 2 * R, R));
  const Var o = ops::sigmoid(ops::slice_cols(z, 3 * R, R));
  const Var c = ops::add(ops::mul(c_prev, f), ops::mul(u, i));
  return {ops::mul(o, ops::tanh(c)), c};
}

Tensor LstmPredictor::readout(const Tensor& h) const { return ops::linear(h, rw_.value, &rb_.value); }

Tensor LstmPredictor::input_projection(const SequenceBatch& batch) const {
  return ops::linear(batch.inputs, gx_.value, &gb_.value);
}

Var LstmPredictor::forward(Tape& tape, const SequenceBatch& batch, Var row_embeddings, bool track,
                           const Tensor* cached_projection) {
  const std::size_t B = batch.rows, R = shape_.hidden;
  if (batch.inputs.cols() != shape_.input_width())
    throw DimensionError("LSTM forward: input width " + std::to_string(batch.inputs.cols()) + ", expected " +
                         std::to_string(shape_.input_width()));
  auto leaf = [&](Parameter& p) { return track ? tape.parameter(p) : tape.constant_ref(p.value); };

  Var zx = cached_projection ? tape.constant_ref(*cached_projection)
                             : ops::affine(tape.constant_ref(batch.inputs), leaf(gx_), leaf(gb_));
  Var ze;
  if (conditioned()) {
    const Tensor& e = row_embeddings.value();
    if (e.rows() != B || e.cols() != shape_.embedding_dim)
      throw DimensionError("LSTM forward: embeddings " + shape_string(e.shape()) + " for " + std::to_string(B) +
                           " sequences");
    ze = ops::linear(row_embeddings, leaf(ge_));
  }
  const Var wh = leaf(gh_);

  std::vector<Var> hs;
  hs.reserve(batch.steps);
  Var h, c;
  for (std::size_t t = 0; t < batch.steps; ++t) {
    Var z = ops::slice_rows(zx, t * B, B);
    if (conditioned()) z = ops::add(z, ze);
    if (t > 0) z = ops::add(z, ops::linear(h, wh));
    const Var f = ops::sigmoid(ops::slice_cols(z, 0, R));
    const Var i = ops::sigmoid(ops::slice_cols(z, R, R));
    const Var u = ops::tanh(ops::slice_cols(z, 2 * R, R));
    const Var o = ops::sigmoid(ops::slice_cols(z, 3 * R, R));
    c = t == 0 ? ops::mul(u, i) : ops::add(ops::mul(c, f), ops::mul(u, i));
    h = ops::mul(o, ops::tanh(c));
    hs.push_back(h);
  }
  const Var all_h = ops::concat(hs, 0);
  return ops::affine(all_h, leaf(rw_), leaf(rb_));
}

Tensor LstmPredictor::predict(const SequenceBatch& batch, const Tensor* subject_embeddings) const {
  const std::size_t B = batch.rows, R = shape_.hidden;
  Tensor zx = input_projection(batch);
  if (conditioned()) {
    if (!subject_embeddings) throw DimensionError("conditioned LSTM: embeddings required");
    const Tensor rows = gather(*subject_embeddings, batch.owner);
    check_embeddings(&rows, B);
    add_rows_each_step(zx, ops::linear(rows, ge_.value), B, batch.steps);
  }
  Tensor h({B, R}), c({B, R}), hs({batch.steps * B, R});
  const std::size_t G = 4 * R;
  for (std::size_t t = 0; t < batch.steps; ++t) {
    Tensor z = row_block(zx, t * B, B);
    if (t > 0) add_into(z, ops::linear(h, gh_.value));
    activate_gates(z, R);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < R; ++j) {
        const double* g = z.data() + b * G;
        const double cv = c.at(b, j) * g[j] + g[2 * R + j] * g[R + j];
        c.at(b, j) = cv;
        h.at(b, j) = g[3 * R + j] * std::tanh(cv);
      }
    std::copy(h.values().begin(), h.values().end(), hs.row(t * B).begin());
  }
  return readout(hs);
}

std::vector<Parameter*> LstmPredictor::parameters() {
  std::vector<Parameter*> out{&gx_, &gh_};
  if (conditioned()) out.push_back(&ge_);
  out.insert(out.end(), {&gb_, &rw_, &rb_});
  return out;
}

std::vector<const Parameter*> LstmPredictor::parameters() const {
  std::vector<const Parameter*> out{&gx_, &gh_};
  if (conditioned()) out.push_back(&ge_);
  out.insert(out.end(), {&gb_, &rw_, &rb_});
  return out;
}

std::size_t EmbeddingTable::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  throw LookupError("subject '" + std::string(id) + "' has no embedding");
}

Tensor EmbeddingTable::row(std::string_view id) const {
  const auto r = table.value.row(index_of(id));
  return Tensor({r.size()}, std::vector<double>(r.begin(), r.end()));
}

Tensor EmbeddingTable::centroid() const {
  const std::size_t n = table.value.rows(), e = table.value.cols();
  Tensor out({e});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < e; ++j) out[j] += table.value.at(r, j);
  for (double& v : out.values()) v /= static_cast<double>(std::max<std::size_t>(n, 1));
  return out;
}

std::vector<double> sequence_loss(const LstmPredictor& model, std::span<const SubjectInputs> subjects,
                                  const Tensor* embeddings) {
  if (subjects.empty()) return {};
  const SequenceBatch batch = make_batch(subjects);
  const Tensor pred = model.predict(batch, embeddings);
  std::vector<double> sse(subjects.size(), 0.0);
  const std::size_t f = pred.cols();
  for (std::size_t t = 0; t < batch.steps; ++t)
    for (std::size_t b = 0; b < batch.rows; ++b) {
      const std::size_t row = t * batch.rows + b;
      double s = 0;
      for (std::size_t j = 0; j < f; ++j) {
        const double d = pred.at(row, j) - batch.targets.at(row, j);
        s += d * d;
      }
      sse[batch.owner[b]] += s;
    }
  for (std::size_t k = 0; k < subjects.size(); ++k) sse[k] /= static_cast<double>(subjects[k].targets.rows());
  return sse;
}

FitResult fit_embeddings(LstmPredictor& model, std::span<const SubjectInputs> subjects, const Tensor& init,
                         const FitConfig& config) {
  if (!model.conditioned()) throw UsageError("fit_embeddings: the vanilla LSTM has no embeddings");
  if (subjects.empty()) throw DataError("fit_embeddings: no subjects");
  for (const auto& s : subjects)
    if (s.targets.rows() == 0) throw DataError("subject '" + s.id + "': empty sequences");
  const std::size_t n = subjects.size(), e = model.shape().embedding_dim;
  if (init.size() != e)
    throw DimensionError("fit_embeddings: initial embedding has " + std::to_string(init.size()) + " values, expected " +
                         std::to_string(e));

  Parameter table("fit.embeddings", Tensor({n, e}));
  for (std::size_t r = 0; r < n; ++r) std::copy(init.values().begin(), init.values().end(), table.value.row(r).begin());

  const SequenceBatch batch = make_batch(subjects);
  const Tensor projection = model.input_projection(batch);
  FreezeGuard freeze(model.parameters());
  auto opt = Optimizer::adam({.lr = config.lr});
  opt.add(table);

  FitResult out;
  const double scale = 1.0 / static_cast<double>(batch.steps * batch.rows);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    const Var rows = ops::gather_rows(tape.parameter(table), batch.owner);
    const Var pred = model.forward(tape, batch, rows, false, &projection);
    const Var loss = ops::scale(ops::squared_l2(pred, tape.constant_ref(batch.targets)), scale);
    out.loss_curve.push_back(loss.value()[0]);
    tape.backward(loss);
    opt.step();
    opt.zero_grad();
  }
  out.embeddings = table.value;
  out.final_loss = sequence_loss(model, subjects, &out.embeddings);
  double mean = 0;
  for (double v : out.final_loss) mean += v;
  out.loss_curve.push_back(mean / static_cast<double>(n));
  return out;
}

FitResult fit_new_subject_embedding(LstmPredictor& model, const SubjectInputs& subject, const Tensor& init,
                                    const FitConfig& config) {
  return fit_embeddings(model, std::span<const SubjectInputs>(&subject, 1), init, config);
}

Tensor predict_next_active(const LstmPredictor& model, const SubjectInputs& subject, const Tensor* embedding,
                           std::size_t t) {
  const std::size_t total = subject.targets.rows();
  if (t >= total)
    throw IndexError("predict_next_active: step " + std::to_string(t) + " outside [0, " + std::to_string(total) + ")");
  const std::size_t steps = subject.steps(), start = (t / steps) * steps;
  const std::size_t R = model.shape().hidden;
  Tensor e;
  if (model.conditioned()) {
    if (!embedding) throw DimensionError("predict_next_active: conditioned model needs an embedding");
    e = embedding->reshaped({1, embedding->size()});
  }
  Tensor h({1, R}), c({1, R});
  for (std::size_t tau = start; tau <= t; ++tau) {
    const auto x = subject.inputs.row(tau);
    const Tensor xt({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    auto step = model.cell(xt, h, c, model.conditioned() ? &e : nullptr);
    h = std::move(step.h);
    c = std::move(step.c);
  }
  return model.readout(h).reshaped({model.shape().frame_size});
}

LstmTrainResult train_lstm(LstmVariant variant, std::span<const SubjectInputs> train,
                           std::span<const SubjectInputs> eval, const LstmTrainConfig& config,
                           const EmbeddingTable* initial_table) {
  if (train.empty()) throw ConfigError("train_lstm: empty training set");
  const bool cond = variant == LstmVariant::conditioned;
  const std::size_t f = train.front().targets.cols();
  SeedStream seeds(config.seed);
  Rng init_rng(seeds.child(1)), order_rng(seeds.child(2)), emb_rng(seeds.child(3));

  LstmTrainResult res;
  res.model = LstmPredictor({f, config.hidden, config.embedding_dim, variant}, init_rng);
  auto& model = res.model;
  auto net = model.parameters();

  auto& table = res.table;
  if (cond) {
    const std::size_t e = config.embedding_dim;
    table.table = Parameter("chi.embeddings", init::normal({train.size(), e}, config.embedding_init_sd, emb_rng));
    for (std::size_t k = 0; k < train.size(); ++k) {
      table.ids.push_back(train[k].id);
      if (initial_table) {
        if (initial_table->dim() != e) throw DimensionError("train_lstm: initial embedding width mismatch");
        const auto src = initial_table->table.value.row(initial_table->index_of(train[k].id));
        std::copy(src.begin(), src.end(), table.table.value.row(k).begin());
      }
    }
  }

  auto opt = Optimizer::adam({.lr = config.lr, .weight_decay = config.weight_decay});
  opt.add(net);
  if (cond) opt.add(table.table, config.embedding_lr.value_or(config.lr));

  // Eval subjects need embeddings of their own for conditioned checkpoints.
  Parameter eval_table("eval.embeddings", Tensor({eval.size(), cond ? config.embedding_dim : 0}));
  auto eval_opt = Optimizer::adam({.lr = config.eval_refit_lr});
  eval_opt.add(eval_table);
  const SequenceBatch eval_batch = eval.empty() ? SequenceBatch{} : make_batch(eval);
  bool eval_initialized = false;

  auto refit_eval = [&] {
    if (!cond || eval.empty()) return;
    if (!eval_initialized) {
      const Tensor mid = table.centroid();
      for (std::size_t r = 0; r < eval.size(); ++r)
        std::copy(mid.values().begin(), mid.values().end(), eval_table.value.row(r).begin());
      eval_initialized = true;
    }
    const Tensor projection = model.input_projection(eval_batch);
    const double scale = 1.0 / static_cast<double>(eval_batch.steps * eval_batch.rows);
    for (std::size_t s = 0; s < config.eval_refit_steps; ++s) {
      Tape tape;
      const Var rows = ops::gather_rows(tape.parameter(eval_table), eval_batch.owner);
      const Var pred = model.forward(tape, eval_batch, rows, false, &projection);
      tape.backward(ops::scale(ops::squared_l2(pred, tape.constant_ref(eval_batch.targets)), scale));
      eval_opt.step();
      eval_opt.zero_grad();
    }
  };
  auto score = [&] {
    if (eval.empty()) {
      const auto l = sequence_loss(model, train, cond ? &table.table.value : nullptr);
      return std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
    }
    refit_eval();
    const Tensor pred = model.predict(eval_batch, cond ? &eval_table.value : nullptr);
    return batch_loss(pred, eval_batch.targets);
  };

  double best = score();
  res.eval_loss.push_back(best);
  auto best_net = snapshot(net);
  Tensor best_table = table.table.value;

  const std::size_t per_batch = config.batch_subjects ? config.batch_subjects : train.size();
  std::vector<std::size_t> order = all_indices(train.size());
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double total = 0;
    std::size_t frames = 0;
    for (std::size_t start = 0; start < order.size(); start += per_batch) {
      const std::span<const std::size_t> which(order.data() + start, std::min(per_batch, order.size() - start));
      const SequenceBatch batch = make_batch(train, which);
      Tape tape;
      Var rows;
      if (cond) rows = ops::gather_rows(tape.parameter(table.table), batch.owner);
      const Var pred = model.forward(tape, batch, rows, true);
      const Var sse = ops::squared_l2(pred, tape.constant_ref(batch.targets));
      const std::size_t n = batch.steps * batch.rows;
      total += sse.value()[0];
      frames += n;
      tape.backward(ops::scale(sse, 1.0 / static_cast<double>(n)));
      opt.step();
      opt.zero_grad();
    }
    res.train_loss.push_back(total / static_cast<double>(frames));
    const double current = score();
    res.eval_loss.push_back(current);
    if (current < best) {
      best = current;
      res.best_epoch = epoch;
      best_net = snapshot(net);
      best_table = table.table.value;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  restore(net, best_net);
  table.table.value = best_table;
  for (auto* p : net) p->zero_grad();
  table.table.zero_grad();
  return res;
}

LstmTrainResult train_cond_lstm(std::span<const SubjectInputs> train, std::span<const SubjectInputs> eval,
                                const LstmTrainConfig& config, const EmbeddingTable* initial_table) {
  return train_lstm(LstmVariant::conditioned, train, eval, config, initial_table);
}

LstmTrainResult train_vanilla_lstm(std::span<const SubjectInputs> train, std::span<const SubjectInputs> eval,
                                   const LstmTrainConfig& config) {
  return train_lstm(LstmVariant::vanilla, train, eval, config);
}

ModelBundle lstm_bundle(const LstmPredictor& model, const EmbeddingTable* table) {
  ModelBundle b;
  for (const Parameter* p : model.parameters()) b.add(p->name, p->value);
  const auto& s = model.shape();
  b.meta = {{"kind", "lstm"},
            {"variant", variant_name(s.variant)},
            {"frame_size", s.frame_size},
            {"hidden", s.hidden},
            {"embedding_dim", s.embedding_dim}};
  if (table && model.conditioned()) {
    b.add(table->table.name, table->table.value);
    b.meta["subject_ids"] = table->ids;
  }
  return b;
}

std::pair<LstmPredictor, EmbeddingTable> lstm_from_bundle(const ModelBundle& b) {
  if (b.kind() != "lstm") throw FormatError("bundle kind '" + b.kind() + "' is not an LSTM", 0);
  LstmShape shape;
  try {
    shape.frame_size = b.meta.at("frame_size").get<std::size_t>();
    shape.hidden = b.meta.at("hidden").get<std::size_t>();
    shape.embedding_dim = b.meta.at("embedding_dim").get<std::size_t>();
    shape.variant = parse_variant(b.meta.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("LSTM bundle metadata: ") + e.what(), 0);
  }
  auto model = LstmPredictor::zeros(shape);
  const auto params = model.parameters();
  load_parameters(b, params);
  EmbeddingTable table;
  if (b.has("chi.embeddings")) {
    table.table = Parameter("chi.embeddings", b.tensor("chi.embeddings"));
    table.ids = b.meta.value("subject_ids", std::vector<std::string>{});
    if (table.ids.size() != table.table.value.rows())
      throw FormatError("LSTM bundle: embedding rows do not match subject ids", 0);
  }
  return {std::move(model), std::move(table)};
}

}  // namespace nfembed
