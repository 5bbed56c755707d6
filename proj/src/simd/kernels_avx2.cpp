#include "nfembed/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

// Only the functions marked NFEMBED_AVX2 are compiled for AVX2/FMA; the rest
// of this file (packing, drivers) stays baseline x86-64 so nothing here can
// leak wide instructions into code that runs before dispatch.
#define NFEMBED_AVX2 __attribute__((target("avx2,fma")))

namespace nfembed::simd {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

// A block [mc x kc] -> ceil(mc/kMr) panels, each kc columns of kMr values.
void pack_a(std::size_t mc, std::size_t kc, const MatrixView& a, std::size_t i0, std::size_t p0,
            double* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t r = 0;
      for (; r < rows; ++r) *out++ = a.at(i0 + ir + r, p0 + p);
      for (; r < kMr; ++r) *out++ = 0.0;
    }
  }
}

// B block [kc x nc] -> ceil(nc/kNr) panels, each kc rows of kNr values.
void pack_b(std::size_t kc, std::size_t nc, const MatrixView& b, std::size_t p0, std::size_t j0,
            double* out) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t q = 0;
      if (cols == kNr && b.col_stride == 1) {
        const double* src = b.data + static_cast<std::ptrdiff_t>(p0 + p) * b.row_stride +
                            static_cast<std::ptrdiff_t>(j0 + jr);
        for (; q < kNr; ++q) *out++ = src[q];
        continue;
      }
      for (; q < cols; ++q) *out++ = b.at(p0 + p, j0 + jr + q);
      for (; q < kNr; ++q) *out++ = 0.0;
    }
  }
}

NFEMBED_AVX2 void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c,
                               std::size_t ldc, std::size_t mr, std::size_t nr, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();

  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap + 0);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    a = _mm256_broadcast_sd(ap + 4);
    c40 = _mm256_fmadd_pd(a, b0, c40);
    c41 = _mm256_fmadd_pd(a, b1, c41);
    a = _mm256_broadcast_sd(ap + 5);
    c50 = _mm256_fmadd_pd(a, b0, c50);
    c51 = _mm256_fmadd_pd(a, b1, c51);
    ap += kMr;
    bp += kNr;
  }

  alignas(32) double tile[kMr * kNr];
  _mm256_store_pd(tile + 0, c00);
  _mm256_store_pd(tile + 4, c01);
  _mm256_store_pd(tile + 8, c10);
  _mm256_store_pd(tile + 12, c11);
  _mm256_store_pd(tile + 16, c20);
  _mm256_store_pd(tile + 20, c21);
  _mm256_store_pd(tile + 24, c30);
  _mm256_store_pd(tile + 28, c31);
  _mm256_store_pd(tile + 32, c40);
  _mm256_store_pd(tile + 36, c41);
  _mm256_store_pd(tile + 40, c50);
  _mm256_store_pd(tile + 44, c51);

  if (nr == kNr) {
    for (std::size_t r = 0; r < mr; ++r) {
      double* crow = c + r * ldc;
      __m256d lo = _mm256_load_pd(tile + r * kNr);
      __m256d hi = _mm256_load_pd(tile + r * kNr + 4);
      if (accumulate) {
        lo = _mm256_add_pd(_mm256_loadu_pd(crow), lo);
        hi = _mm256_add_pd(_mm256_loadu_pd(crow + 4), hi);
      }
      _mm256_storeu_pd(crow, lo);
      _mm256_storeu_pd(crow + 4, hi);
    }
    return;
  }
  for (std::size_t r = 0; r < mr; ++r) {
    double* crow = c + r * ldc;
    for (std::size_t q = 0; q < nr; ++q)
      crow[q] = accumulate ? crow[q] + tile[r * kNr + q] : tile[r * kNr + q];
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
               std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
    return;
  }
  thread_local std::vector<double> a_buf;
  thread_local std::vector<double> b_buf;
  a_buf.resize(kMc * kKc);
  b_buf.resize(kKc * (kNc + kNr));

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(kc, nc, b, pc, jc, b_buf.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(mc, kc, a, ic, pc, a_buf.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t nr = std::min(kNr, nc - jr);
          const double* bp = b_buf.data() + (jr / kNr) * kc * kNr;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t mr = std::min(kMr, mc - ir);
            const double* ap = a_buf.data() + (ir / kMr) * kc * kMr;
            micro_kernel(kc, ap, bp, c + (ic + ir) * ldc + jc + jr, ldc, mr, nr, acc);
          }
        }
      }
    }
  }
}

NFEMBED_AVX2 double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
  double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

NFEMBED_AVX2 void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

NFEMBED_AVX2 void mul_acc_avx2(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(z + i), prod));
  }
  for (; i < n; ++i) z[i] = z[i] + x[i] * y[i];
}

// Mirrors adam_scalar operation by operation (no fused multiply-add) so both
// levels round identically.
NFEMBED_AVX2 void adam_avx2(std::size_t n, double* param, const double* grad, double* m, double* v,
                            const AdamCoeffs& k) {
  const __m256d b1 = _mm256_set1_pd(k.beta1);
  const __m256d b2 = _mm256_set1_pd(k.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - k.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - k.beta2);
  const __m256d bias1 = _mm256_set1_pd(k.bias1);
  const __m256d bias2 = _mm256_set1_pd(k.bias2);
  const __m256d lr = _mm256_set1_pd(k.lr);
  const __m256d eps = _mm256_set1_pd(k.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bias1);
    const __m256d v_hat = _mm256_div_pd(vi, bias2);
    const __m256d step =
        _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  const double one_m_b1 = 1.0 - k.beta1;
  const double one_m_b2 = 1.0 - k.beta2;
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = k.beta1 * m[i] + one_m_b1 * g;
    v[i] = k.beta2 * v[i] + one_m_b2 * (g * g);
    const double m_hat = m[i] / k.bias1;
    const double v_hat = v[i] / k.bias2;
    param[i] = param[i] - k.lr * m_hat / (std::sqrt(v_hat) + k.eps);
  }
}

constexpr KernelTable kAvx2{Level::avx2, gemm_avx2, dot_avx2, axpy_avx2, mul_acc_avx2, adam_avx2};

}  // namespace

namespace detail {
const KernelTable* avx2_table() { return &kAvx2; }
}  // namespace detail

}  // namespace nfembed::simd

#else

namespace nfembed::simd::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace nfembed::simd::detail

#endif
