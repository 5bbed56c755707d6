#pragma once

// Inner-loop arithmetic kernels. Every kernel has a portable scalar reference
// and an AVX2/FMA variant; the active table is chosen once at startup from
// CPUID and can be overridden with NFEMBED_SIMD=scalar|avx2|auto.
//
// Elementwise kernels produce bit-identical results across levels. Reductions
// (gemm, dot) differ only in summation order.

#include <cstddef>
#include <string_view>

namespace nfembed::simd {

enum class Level { scalar, avx2 };

/// Strided read-only view of a dense matrix. Element (i, j) lives at
/// data[i * row_stride + j * col_stride]; a transposed operand is just a view
/// with swapped strides.
struct MatrixView {
  const double* data;
  std::ptrdiff_t row_stride;
  std::ptrdiff_t col_stride;

  double at(std::size_t i, std::size_t j) const {
    return data[static_cast<std::ptrdiff_t>(i) * row_stride +
                static_cast<std::ptrdiff_t>(j) * col_stride];
  }
};

inline MatrixView row_major(const double* data, std::size_t cols) {
  return {data, static_cast<std::ptrdiff_t>(cols), 1};
}

inline MatrixView transposed(const double* data, std::size_t cols) {
  return {data, 1, static_cast<std::ptrdiff_t>(cols)};
}

/// Bias-corrected adaptive-moment update coefficients for one step.
struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

struct KernelTable {
  Level level;

  /// C[m x n] (row stride ldc) = A[m x k] * B[k x n], or C += A * B when accumulate.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b,
               double* c, std::size_t ldc, bool accumulate);

  double (*dot)(std::size_t n, const double* x, const double* y);

  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  /// z += x * y (elementwise)
  void (*mul_acc)(std::size_t n, const double* x, const double* y, double* z);

  /// In-place adaptive-moment step over n coordinates.
  void (*adam)(std::size_t n, double* param, const double* grad, double* m, double* v,
               const AdamCoeffs& coeffs);
};

const KernelTable& kernels();
const KernelTable& kernels_for(Level level);

bool level_supported(Level level);
Level active_level();

/// Switch the process-wide table. Not meant to be called while kernels run on
/// other threads.
void set_level(Level level);

std::string_view level_name(Level level);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace nfembed::simd
