#include "nfembed/simd/kernels.hpp"

#include <cmath>

namespace nfembed::simd {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b,
                 double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a.at(i, p) * b.at(p, j);
      crow[j] = accumulate ? crow[j] + sum : sum;
    }
  }
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void mul_acc_scalar(std::size_t n, const double* x, const double* y, double* z) {
  for (std::size_t i = 0; i < n; ++i) z[i] = z[i] + x[i] * y[i];
}

void adam_scalar(std::size_t n, double* param, const double* grad, double* m, double* v,
                 const AdamCoeffs& k) {
  const double one_m_b1 = 1.0 - k.beta1;
  const double one_m_b2 = 1.0 - k.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = k.beta1 * m[i] + one_m_b1 * g;
    v[i] = k.beta2 * v[i] + one_m_b2 * (g * g);
    const double m_hat = m[i] / k.bias1;
    const double v_hat = v[i] / k.bias2;
    param[i] = param[i] - k.lr * m_hat / (std::sqrt(v_hat) + k.eps);
  }
}

constexpr KernelTable kScalar{Level::scalar, gemm_scalar, dot_scalar, axpy_scalar, mul_acc_scalar,
                              adam_scalar};

}  // namespace

namespace detail {
const KernelTable& scalar_table() { return kScalar; }
}  // namespace detail

}  // namespace nfembed::simd
