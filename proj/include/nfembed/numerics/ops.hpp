#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nfembed/numerics/rng.hpp"
#include "nfembed/numerics/tape.hpp"

namespace nfembed {

enum class Mode { train, eval };
enum class Activation { sigmoid, tanh, relu };

/// Spatial extent of a 3-D volume, used by the convolution op.
struct Volume {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t d = 0;
  std::size_t voxels() const { return h * w * d; }
};

namespace ops {

// --- plain tensor helpers (no tape) --------------------------------------

/// x W^T + b for x of shape [in] or [batch x in], W [out x in], b [out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);
double sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);

// --- recorded operations -------------------------------------------------

/// out[i] = sum_j W[i][j] x[j] + b[i]; x may be a batch of rows.
Var affine(Var x, Var w, Var b);
Var linear(Var x, Var w);
/// Plain matrix product [m x k] * [k x n].
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
/// Adds the row vector b [n] to every row of x [rows x n].
Var add_rowvec(Var x, Var b);

Var activation(Var x, Activation kind);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);

/// Inverted dropout. Eval mode (or p == 0) returns `x` itself.
/// Throws ConfigError unless 0 <= p < 1.
Var dropout(Var x, double p, Mode mode, Rng& rng);

/// Concatenate along `axis`. Rank-1 operands use axis 0; rank-2 operands may
/// use axis 0 (rows) or 1 (columns). Empty rank-1 operands are allowed.
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Rows of `table` selected by `index`, in order.
Var gather_rows(Var table, std::vector<std::size_t> index);
Var reshape(Var x, Shape shape);

Var sum(Var x);
Var mean(Var x);

/// Sum over all elements of (pred - target)^2.
Var squared_l2(Var pred, Var target);
/// Sum over rows of -log softmax(logits_row)[target_row]. Throws LabelError on
/// an out-of-range class index.
Var cross_entropy(Var logits, std::span<const int> targets);

/// Single-channel 3-D convolution with kernel 3x3x3, stride 1, zero padding.
/// x: [n x V] frames, w: [k x 27], b: [k]. Output [n x k*V], filter-major per row.
Var conv3d_same(Var x, Volume vol, Var w, Var b);
/// Averages consecutive blocks of `block` columns: [n x c*block] -> [n x c].
Var mean_pool_blocks(Var x, std::size_t block);

}  // namespace ops
}  // namespace nfembed
