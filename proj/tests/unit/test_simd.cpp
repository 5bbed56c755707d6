#include <cmath>
#include <vector>

#include "doctest.h"
#include "nfembed/numerics/rng.hpp"
#include "nfembed/simd/kernels.hpp"

using namespace nfembed;
using namespace nfembed::simd;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double relative_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return worst;
}

}  // namespace

TEST_CASE("scalar gemm matches hand computation") {
  // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4, -1.0);
  kernels_for(Level::scalar).gemm(2, 2, 2, row_major(a.data(), 2), row_major(b.data(), 2), c.data(), 2, false);
  CHECK(c == std::vector<double>{19, 22, 43, 50});
  kernels_for(Level::scalar).gemm(2, 2, 2, transposed(a.data(), 2), row_major(b.data(), 2), c.data(), 2, true);
  // A^T B = [[26,30],[38,44]] added on top
  CHECK(c == std::vector<double>{45, 52, 81, 94});
}

TEST_CASE("dispatch honours explicit level") {
  const Level before = active_level();
  set_level(Level::scalar);
  CHECK(active_level() == Level::scalar);
  CHECK(level_name(active_level()) == "scalar");
  set_level(before);
}

TEST_CASE("avx2 gemm equals scalar reference across shapes and layouts") {
  if (!level_supported(Level::avx2)) {
    MESSAGE("AVX2 not available; skipping equivalence");
    return;
  }
  const auto& ref = kernels_for(Level::scalar);
  const auto& vec = kernels_for(Level::avx2);
  Rng rng(11);
  const std::size_t sizes[][3] = {{1, 1, 1},   {1, 7, 3},   {6, 8, 1},     {7, 9, 5},    {13, 17, 29},
                                  {64, 256, 436}, {97, 33, 300}, {5, 2049, 4}, {18, 180, 64}, {0, 3, 3}};
  for (const auto& s : sizes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    const auto a = random_values(m * k, rng);
    const auto at = random_values(k * m, rng);
    const auto b = random_values(k * n, rng);
    const auto bt = random_values(n * k, rng);
    for (int layout = 0; layout < 4; ++layout) {
      const MatrixView av = (layout & 1) ? transposed(at.data(), m) : row_major(a.data(), k);
      const MatrixView bv = (layout & 2) ? transposed(bt.data(), k) : row_major(b.data(), n);
      for (bool acc : {false, true}) {
        auto c_ref = random_values(m * n, rng);
        auto c_vec = c_ref;
        ref.gemm(m, n, k, av, bv, c_ref.data(), n, acc);
        vec.gemm(m, n, k, av, bv, c_vec.data(), n, acc);
        INFO("m=" << m << " n=" << n << " k=" << k << " layout=" << layout << " acc=" << acc);
        CHECK(relative_gap(c_ref, c_vec) < 1e-12);
      }
    }
  }
}

TEST_CASE("avx2 gemm respects output row stride") {
  if (!level_supported(Level::avx2)) return;
  Rng rng(3);
  const std::size_t m = 9, n = 10, k = 4, ldc = 15;
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  std::vector<double> c_ref(m * ldc, 7.0), c_vec(m * ldc, 7.0);
  kernels_for(Level::scalar).gemm(m, n, k, row_major(a.data(), k), row_major(b.data(), n), c_ref.data(), ldc, false);
  kernels_for(Level::avx2).gemm(m, n, k, row_major(a.data(), k), row_major(b.data(), n), c_vec.data(), ldc, false);
  CHECK(relative_gap(c_ref, c_vec) < 1e-12);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = n; j < ldc; ++j) CHECK(c_vec[i * ldc + j] == 7.0);
}

TEST_CASE("avx2 elementwise kernels are bit-identical to scalar") {
  if (!level_supported(Level::avx2)) return;
  const auto& ref = kernels_for(Level::scalar);
  const auto& vec = kernels_for(Level::avx2);
  Rng rng(5);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 17u, 1000u}) {
    const auto x = random_values(n, rng), y = random_values(n, rng);
    auto z_ref = random_values(n, rng);
    auto z_vec = z_ref;
    ref.axpy(n, 0.37, x.data(), z_ref.data());
    vec.axpy(n, 0.37, x.data(), z_vec.data());
    CHECK(z_ref == z_vec);
    ref.mul_acc(n, x.data(), y.data(), z_ref.data());
    vec.mul_acc(n, x.data(), y.data(), z_vec.data());
    CHECK(z_ref == z_vec);

    auto p_ref = random_values(n, rng);
    auto p_vec = p_ref;
    std::vector<double> m_ref(n, 0.0), v_ref(n, 0.0);
    auto m_vec = m_ref, v_vec = v_ref;
    for (int step = 1; step <= 3; ++step) {
      const AdamCoeffs c{1e-3, 0.9, 0.999, 1e-8, 1.0 - std::pow(0.9, step), 1.0 - std::pow(0.999, step)};
      ref.adam(n, p_ref.data(), x.data(), m_ref.data(), v_ref.data(), c);
      vec.adam(n, p_vec.data(), x.data(), m_vec.data(), v_vec.data(), c);
    }
    CHECK(p_ref == p_vec);
    CHECK(m_ref == m_vec);
    CHECK(v_ref == v_vec);

    const double d_ref = ref.dot(n, x.data(), y.data());
    const double d_vec = vec.dot(n, x.data(), y.data());
    CHECK(std::abs(d_ref - d_vec) <= 1e-12 * std::max(1.0, std::abs(d_ref)));
  }
}
