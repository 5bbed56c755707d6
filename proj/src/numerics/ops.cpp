#include "nfembed/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nfembed/errors.hpp"
#include "nfembed/simd/kernels.hpp"

namespace nfembed::ops {
namespace {

using simd::kernels;
using simd::row_major;
using simd::transposed;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected vector or matrix, got " + shape_string(t.shape()));
}

Shape linear_out_shape(const Tensor& x, std::size_t out) {
  return x.rank() == 1 ? Shape{out} : Shape{x.rows(), out};
}

void check_linear(const char* op, const Tensor& x, const Tensor& w, const Tensor* b) {
  require_matrix(op, x);
  if (w.rank() != 2 || w.cols() != x.cols())
    throw DimensionError(std::string(op) + ": input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  if (b && (b->rank() != 1 || b->size() != w.rows()))
    throw DimensionError(std::string(op) + ": bias " + shape_string(b->shape()) + " for weight " +
                         shape_string(w.shape()));
}

// Elementwise unary op recorded with a derivative expressed through the
// output value y and input value x.
template <class F, class D>
Var unary(Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, dfdx](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& xv = t.value(xi);
    const Tensor& yv = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  check_linear("affine", x, w, b);
  const std::size_t rows = x.rows(), in = x.cols(), out = w.rows();
  Tensor y(linear_out_shape(x, out));
  kernels().gemm(rows, out, in, row_major(x.data(), in), transposed(w.data(), in), y.data(), out, false);
  if (b)
    for (std::size_t r = 0; r < rows; ++r) kernels().axpy(out, 1.0, b->data(), y.data() + r * out);
  return y;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

namespace {

Var linear_impl(Var x, Var w, const Var* b) {
  const Tensor& bias = b ? b->value() : Tensor{};
  Tensor y = linear(x.value(), w.value(), b ? &bias : nullptr);
  const int xi = x.id(), wi = w.id(), bi = b ? b->id() : -1;
  std::vector<int> inputs{xi, wi};
  if (b) inputs.push_back(bi);
  return x.tape().record(std::move(y), std::move(inputs), [xi, wi, bi](Tape& t, int self) {
    const Tensor& xv = t.value(xi);
    const Tensor& wv = t.value(wi);
    const Tensor& gy = t.grad(self);
    const std::size_t rows = xv.rows(), in = xv.cols(), out = wv.rows();
    const auto& k = kernels();
    if (t.needs_grad(xi))
      k.gemm(rows, in, out, row_major(gy.data(), out), row_major(wv.data(), in), t.grad(xi).data(), in, true);
    if (t.needs_grad(wi))
      k.gemm(out, in, rows, transposed(gy.data(), out), row_major(xv.data(), in), t.grad(wi).data(), in, true);
    if (bi >= 0 && t.needs_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t r = 0; r < rows; ++r) k.axpy(out, 1.0, gy.data() + r * out, gb.data());
    }
  });
}

}  // namespace

Var affine(Var x, Var w, Var b) { return linear_impl(x, w, &b); }

Var linear(Var x, Var w) { return linear_impl(x, w, nullptr); }

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw DimensionError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t m = av.rows(), kk = av.cols(), n = bv.cols();
  Tensor y({m, n});
  kernels().gemm(m, n, kk, row_major(av.data(), kk), row_major(bv.data(), n), y.data(), n, false);
  const int ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    const Tensor& gy = t.grad(self);
    const std::size_t m = av.rows(), kk = av.cols(), n = bv.cols();
    const auto& k = kernels();
    if (t.needs_grad(ai))
      k.gemm(m, kk, n, row_major(gy.data(), n), transposed(bv.data(), n), t.grad(ai).data(), kk, true);
    if (t.needs_grad(bi))
      k.gemm(kk, n, m, transposed(av.data(), kk), row_major(gy.data(), n), t.grad(bi).data(), n, true);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  kernels().axpy(y.size(), 1.0, b.value().data(), y.data());
  const int ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& gy = t.grad(self);
    for (int in : {ai, bi})
      if (t.needs_grad(in)) kernels().axpy(gy.size(), 1.0, gy.data(), t.grad(in).data());
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor y = a.value();
  kernels().axpy(y.size(), -1.0, b.value().data(), y.data());
  const int ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(ai)) kernels().axpy(gy.size(), 1.0, gy.data(), t.grad(ai).data());
    if (t.needs_grad(bi)) kernels().axpy(gy.size(), -1.0, gy.data(), t.grad(bi).data());
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor y(a.value().shape());
  kernels().mul_acc(y.size(), a.value().data(), b.value().data(), y.data());
  const int ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(ai)) kernels().mul_acc(gy.size(), gy.data(), t.value(bi).data(), t.grad(ai).data());
    if (t.needs_grad(bi)) kernels().mul_acc(gy.size(), gy.data(), t.value(ai).data(), t.grad(bi).data());
  });
}

Var scale(Var x, double c) {
  Tensor y(x.value().shape());
  kernels().axpy(y.size(), c, x.value().data(), y.data());
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, c](Tape& t, int self) {
    if (t.needs_grad(xi)) kernels().axpy(t.grad(self).size(), c, t.grad(self).data(), t.grad(xi).data());
  });
}

Var add_rowvec(Var x, Var b) {
  const Tensor& xv = x.value();
  require_matrix("add_rowvec", xv);
  if (b.value().rank() != 1 || b.value().size() != xv.cols())
    throw DimensionError("add_rowvec: " + shape_string(xv.shape()) + " + " + shape_string(b.shape()));
  Tensor y = xv;
  const std::size_t rows = xv.rows(), n = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) kernels().axpy(n, 1.0, b.value().data(), y.data() + r * n);
  const int xi = x.id(), bi = b.id();
  return x.tape().record(std::move(y), {xi, bi}, [xi, bi, rows, n](Tape& t, int self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(xi)) kernels().axpy(gy.size(), 1.0, gy.data(), t.grad(xi).data());
    if (t.needs_grad(bi))
      for (std::size_t r = 0; r < rows; ++r) kernels().axpy(n, 1.0, gy.data() + r * n, t.grad(bi).data());
  });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var activation(Var x, Activation kind) {
  switch (kind) {
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::tanh:
      return tanh(x);
    case Activation::relu:
      return relu(x);
  }
  throw UsageError("activation: unknown kind");
}

Var dropout(Var x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep = 1.0 / (1.0 - p);
  Tensor mask(xv.shape());
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep;
    y[i] = xv[i] * mask[i];
  }
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, mask = std::move(mask)](Tape& t, int self) {
    if (t.needs_grad(xi)) kernels().mul_acc(mask.size(), t.grad(self).data(), mask.data(), t.grad(xi).data());
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  Tape& tape = parts.front().tape();
  std::vector<int> ids;
  for (const Var& v : parts) ids.push_back(v.id());

  const std::size_t rank = parts.front().value().rank();
  for (const Var& v : parts)
    if (v.value().rank() != rank)
      throw DimensionError("concat: mixed ranks " + shape_string(parts.front().shape()) + " and " +
                           shape_string(v.shape()));

  if (rank == 1) {
    if (axis != 0) throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for vectors");
    std::vector<double> out;
    for (const Var& v : parts) out.insert(out.end(), v.value().storage().begin(), v.value().storage().end());
    return tape.record(Tensor::vector(std::move(out)), ids, [ids](Tape& t, int self) {
      const Tensor& gy = t.grad(self);
      std::size_t offset = 0;
      for (int in : ids) {
        const std::size_t n = t.value(in).size();
        if (t.needs_grad(in) && n) kernels().axpy(n, 1.0, gy.data() + offset, t.grad(in).data());
        offset += n;
      }
    });
  }
  if (rank != 2) throw DimensionError("concat: rank " + std::to_string(rank) + " unsupported");

  if (axis == 0) {
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const Var& v : parts) {
      if (v.value().cols() != cols)
        throw DimensionError("concat: row-stacking " + shape_string(parts.front().shape()) + " with " +
                             shape_string(v.shape()));
      rows += v.value().rows();
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const Var& v : parts) out.insert(out.end(), v.value().storage().begin(), v.value().storage().end());
    return tape.record(Tensor::matrix(rows, cols, std::move(out)), ids, [ids](Tape& t, int self) {
      const Tensor& gy = t.grad(self);
      std::size_t offset = 0;
      for (int in : ids) {
        const std::size_t n = t.value(in).size();
        if (t.needs_grad(in) && n) kernels().axpy(n, 1.0, gy.data() + offset, t.grad(in).data());
        offset += n;
      }
    });
  }
  if (axis != 1) throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for matrices");

  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& v : parts) {
    if (v.value().rows() != rows)
      throw DimensionError("concat: column-joining " + shape_string(parts.front().shape()) + " with " +
                           shape_string(v.shape()));
    cols += v.value().cols();
  }
  Tensor y({rows, cols});
  std::size_t offset = 0;
  for (const Var& v : parts) {
    const Tensor& pv = v.value();
    const std::size_t c = pv.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * c, c, y.data() + r * cols + offset);
    offset += c;
  }
  return tape.record(std::move(y), ids, [ids, rows, cols](Tape& t, int self) {
    const Tensor& gy = t.grad(self);
    std::size_t offset = 0;
    for (int in : ids) {
      const std::size_t c = t.value(in).cols();
      if (t.needs_grad(in)) {
        Tensor& gx = t.grad(in);
        for (std::size_t r = 0; r < rows; ++r)
          kernels().axpy(c, 1.0, gy.data() + r * cols + offset, gx.data() + r * c);
      }
      offset += c;
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_matrix("slice_rows", xv);
  if (begin + count > xv.rows())
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") of " + shape_string(xv.shape()));
  const std::size_t cols = xv.cols();
  Tensor y = row_block(xv.rank() == 1 ? xv.reshaped({1, cols}) : xv, begin, count);
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, begin, cols](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& gy = t.grad(self);
    kernels().axpy(gy.size(), 1.0, gy.data(), t.grad(xi).data() + begin * cols);
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_matrix("slice_cols", xv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (begin + count > cols)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") of " + shape_string(xv.shape()));
  Tensor y(xv.rank() == 1 ? Shape{count} : Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + begin, count, y.data() + r * count);
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, begin, count, rows, cols](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      kernels().axpy(count, 1.0, gy.data() + r * count, gx.data() + r * cols + begin);
  });
}

Var gather_rows(Var table, std::vector<std::size_t> index) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("gather_rows: table must be a matrix, got " + shape_string(tv.shape()));
  const std::size_t cols = tv.cols();
  Tensor y({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= tv.rows())
      throw IndexError("gather_rows: row " + std::to_string(index[r]) + " of " + shape_string(tv.shape()));
    std::copy_n(tv.data() + index[r] * cols, cols, y.data() + r * cols);
  }
  const int ti = table.id();
  return table.tape().record(std::move(y), {ti}, [ti, cols, index = std::move(index)](Tape& t, int self) {
    if (!t.needs_grad(ti)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gt = t.grad(ti);
    for (std::size_t r = 0; r < index.size(); ++r)
      kernels().axpy(cols, 1.0, gy.data() + r * cols, gt.data() + index[r] * cols);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi](Tape& t, int self) {
    if (t.needs_grad(xi)) kernels().axpy(t.grad(self).size(), 1.0, t.grad(self).data(), t.grad(xi).data());
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const int xi = x.id();
  return x.tape().record(Tensor::scalar(s), {xi}, [xi](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    const double g = t.grad(self)[0];
    for (double& v : t.grad(xi).values()) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  return scale(sum(x), n ? 1.0 / static_cast<double>(n) : 0.0);
}

Var squared_l2(Var pred, Var target) {
  require_same_shape("squared_l2", pred.value(), target.value());
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    s += d * d;
  }
  const int pi = pred.id(), ti = target.id();
  return pred.tape().record(Tensor::scalar(s), {pi, ti}, [pi, ti](Tape& t, int self) {
    const double g = t.grad(self)[0];
    const Tensor& pv = t.value(pi);
    const Tensor& tv = t.value(ti);
    if (t.needs_grad(pi)) {
      Tensor& gp = t.grad(pi);
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += 2.0 * g * (pv[i] - tv[i]);
    }
    if (t.needs_grad(ti)) {
      Tensor& gt = t.grad(ti);
      for (std::size_t i = 0; i < pv.size(); ++i) gt[i] -= 2.0 * g * (pv[i] - tv[i]);
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  require_matrix("cross_entropy", lv);
  const std::size_t rows = lv.rows(), classes = lv.cols();
  if (targets.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(lv.shape()) + " logits");
  Tensor probs({rows, classes});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw LabelError("cross_entropy: class index " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs.at(r, c) = std::exp(row[c] - log_z);
    loss += log_z - row[static_cast<std::size_t>(y)];
  }
  const int li = logits.id();
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape().record(Tensor::scalar(loss), {li},
                              [li, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, int self) {
                                if (!t.needs_grad(li)) return;
                                const double g = t.grad(self)[0];
                                Tensor& gl = t.grad(li);
                                const std::size_t classes = probs.cols();
                                for (std::size_t r = 0; r < tgt.size(); ++r)
                                  for (std::size_t c = 0; c < classes; ++c) {
                                    const double onehot = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
                                    gl[r * classes + c] += g * (probs.at(r, c) - onehot);
                                  }
                              });
}

namespace {

constexpr std::size_t kTaps = 27;

// Patch matrix [n*V x 27] for a batch of frames, zero padded at the borders.
Tensor im2col(const Tensor& x, Volume vol) {
  const std::size_t n = x.rows(), voxels = vol.voxels();
  Tensor cols({n * voxels, kTaps});
  for (std::size_t f = 0; f < n; ++f) {
    const double* frame = x.data() + f * voxels;
    for (std::size_t i = 0; i < vol.h; ++i)
      for (std::size_t j = 0; j < vol.w; ++j)
        for (std::size_t l = 0; l < vol.d; ++l) {
          double* dst = cols.data() + (f * voxels + (i * vol.w + j) * vol.d + l) * kTaps;
          std::size_t tap = 0;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              for (int dl = -1; dl <= 1; ++dl, ++tap) {
                const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj,
                           ll = static_cast<long>(l) + dl;
                const bool inside = ii >= 0 && jj >= 0 && ll >= 0 && ii < static_cast<long>(vol.h) &&
                                    jj < static_cast<long>(vol.w) && ll < static_cast<long>(vol.d);
                dst[tap] = inside ? frame[(static_cast<std::size_t>(ii) * vol.w + static_cast<std::size_t>(jj)) *
                                              vol.d +
                                          static_cast<std::size_t>(ll)]
                                  : 0.0;
              }
        }
  }
  return cols;
}

}  // namespace

Var conv3d_same(Var x, Volume vol, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t voxels = vol.voxels();
  if (xv.rank() != 2 || xv.cols() != voxels)
    throw DimensionError("conv3d: input " + shape_string(xv.shape()) + " for volume of " + std::to_string(voxels) +
                         " voxels");
  if (wv.rank() != 2 || wv.cols() != kTaps || b.value().size() != wv.rows())
    throw DimensionError("conv3d: weight " + shape_string(wv.shape()) + " / bias " + shape_string(b.shape()));
  const std::size_t n = xv.rows(), filters = wv.rows(), total = n * voxels;

  Tensor cols = im2col(xv, vol);
  // [filters x n*V] = W [filters x 27] * cols^T
  Tensor flat({filters, total});
  kernels().gemm(filters, total, kTaps, row_major(wv.data(), kTaps), transposed(cols.data(), kTaps), flat.data(),
                 total, false);
  Tensor y({n, filters * voxels});
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t c = 0; c < filters; ++c) {
      const double bias = b.value()[c];
      const double* src = flat.data() + c * total + f * voxels;
      double* dst = y.data() + f * filters * voxels + c * voxels;
      for (std::size_t v = 0; v < voxels; ++v) dst[v] = src[v] + bias;
    }

  const int xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().record(
      std::move(y), {xi, wi, bi}, [xi, wi, bi, vol, cols = std::move(cols)](Tape& t, int self) {
        const Tensor& gy = t.grad(self);
        const Tensor& wv = t.value(wi);
        const std::size_t voxels = vol.voxels(), filters = wv.rows();
        const std::size_t n = gy.rows(), total = n * voxels;
        Tensor gflat({filters, total});
        for (std::size_t f = 0; f < n; ++f)
          for (std::size_t c = 0; c < filters; ++c)
            std::copy_n(gy.data() + f * filters * voxels + c * voxels, voxels, gflat.data() + c * total + f * voxels);
        const auto& k = kernels();
        if (t.needs_grad(wi))
          k.gemm(filters, kTaps, total, row_major(gflat.data(), total), row_major(cols.data(), kTaps),
                 t.grad(wi).data(), kTaps, true);
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad(bi);
          for (std::size_t c = 0; c < filters; ++c)
            for (std::size_t i = 0; i < total; ++i) gb[c] += gflat[c * total + i];
        }
        if (t.needs_grad(xi)) {
          // d(cols) [n*V x 27] = gflat^T * W, scattered back onto the frames.
          Tensor gcols({total, kTaps});
          k.gemm(total, kTaps, filters, transposed(gflat.data(), total), row_major(wv.data(), kTaps), gcols.data(),
                 kTaps, false);
          Tensor& gx = t.grad(xi);
          for (std::size_t f = 0; f < n; ++f)
            for (std::size_t i = 0; i < vol.h; ++i)
              for (std::size_t j = 0; j < vol.w; ++j)
                for (std::size_t l = 0; l < vol.d; ++l) {
                  const double* src = gcols.data() + (f * voxels + (i * vol.w + j) * vol.d + l) * kTaps;
                  std::size_t tap = 0;
                  for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj)
                      for (int dl = -1; dl <= 1; ++dl, ++tap) {
                        const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj,
                                   ll = static_cast<long>(l) + dl;
                        if (ii < 0 || jj < 0 || ll < 0 || ii >= static_cast<long>(vol.h) ||
                            jj >= static_cast<long>(vol.w) || ll >= static_cast<long>(vol.d))
                          continue;
                        gx[f * voxels +
                           (static_cast<std::size_t>(ii) * vol.w + static_cast<std::size_t>(jj)) * vol.d +
                           static_cast<std::size_t>(ll)] += src[tap];
                      }
                }
        }
      });
}

Var mean_pool_blocks(Var x, std::size_t block) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || block == 0 || xv.cols() % block != 0)
    throw DimensionError("mean_pool_blocks: " + shape_string(xv.shape()) + " in blocks of " + std::to_string(block));
  const std::size_t rows = xv.rows(), groups = xv.cols() / block;
  const double inv = 1.0 / static_cast<double>(block);
  Tensor y({rows, groups});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t g = 0; g < groups; ++g) {
      double s = 0.0;
      const double* src = xv.data() + r * xv.cols() + g * block;
      for (std::size_t i = 0; i < block; ++i) s += src[i];
      y.at(r, g) = s * inv;
    }
  const int xi = x.id();
  return x.tape().record(std::move(y), {xi}, [xi, block, inv](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    const std::size_t rows = gy.rows(), groups = gy.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t g = 0; g < groups; ++g) {
        const double v = gy.at(r, g) * inv;
        double* dst = gx.data() + r * groups * block + g * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += v;
      }
  });
}

}  // namespace nfembed::ops
