#pragma once

// Synthetic cohorts with a planted latent profile z per subject.
//
//   passive:  p_t = rho * p_{t-1} + sqrt(1 - rho^2) * n(S xi_t),   p_0 = n(S xi_0)
//   active:   a_t = b(z) + alpha * a_{t-1} + gamma * g(z) * s(p_t) + eps_t
//   b(z) = baseline_scale * B z
//   g(z) = 1 + gain_scale * tanh(G z)
//   s(p) = S p
//
// S is a row-normalized Gaussian blur over the voxel grid, n() rescales each
// voxel of S xi to unit variance, and B, G are smooth random spatial patterns
// fixed by the master seed. Passive runs restart from a fresh draw; the active
// recurrence carries a_{t-1} across run boundaries and starts from zero.
// When T_active differs from T, active step t pairs with passive frame t mod T.
//
// Traits: u_k = (w_k . z + trait_noise * |w_k| * nu) / |w_k|, then
//   tas20 = 50 + 11 u, stai = 40 + 10 u, caps5 = 35 + 12 u,
//   age = clamp(44 + 8.5 u, 18, 70), nf_experience = level of u at -0.43, 0.43.
// A zero row w_k gives u_k = 0.

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/numerics/rng.hpp"
#include "nfembed/numerics/tensor.hpp"

namespace nfembed {

struct GeneratorConfig {
  std::size_t n_subjects = 60;
  FrameDims dims{6, 5, 6};
  std::uint16_t runs = 3;
  std::uint16_t passive_len = 14;
  std::uint16_t active_len = 14;
  std::size_t latent_dim = 4;
  double noise_std = 0.1;
  double trait_noise = 0.25;
  double alpha = 0.4;
  double gamma = 1.5;
  double baseline_scale = 0.5;
  double gain_scale = 0.5;
  double passive_ar = 0.8;
  double smoothing = 2.0;
  /// 5 x latent_dim, rows in trait order tas20, stai, caps5, age, nf_experience.
  std::vector<std::vector<double>> trait_weights = default_trait_weights(4);
  std::uint64_t seed = 1;

  static std::vector<std::vector<double>> default_trait_weights(std::size_t latent_dim);

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Shared dynamics of one generated cohort: the blur S and the patterns B, G.
class SyntheticDynamics {
 public:
  explicit SyntheticDynamics(const GeneratorConfig& config);

  std::size_t frame_size() const noexcept { return f_; }
  std::size_t latent_dim() const noexcept { return dz_; }
  double alpha() const noexcept { return alpha_; }
  double gamma() const noexcept { return gamma_; }

  std::vector<double> baseline(std::span<const double> z) const;
  std::vector<double> gain(std::span<const double> z) const;
  std::vector<double> smooth(std::span<const double> x) const;
  /// S xi rescaled per voxel to unit variance.
  std::vector<double> smooth_noise(Rng& rng) const;

  const Tensor& smoothing_matrix() const noexcept { return s_; }
  const Tensor& baseline_patterns() const noexcept { return b_; }
  const Tensor& gain_patterns() const noexcept { return g_; }

 private:
  std::size_t f_ = 0;
  std::size_t dz_ = 0;
  double alpha_ = 0.4;
  double gamma_ = 1.5;
  double baseline_scale_ = 0.5;
  double gain_scale_ = 0.5;
  Tensor s_;  // [F x F]
  Tensor b_;  // [F x dz]
  Tensor g_;  // [F x dz]
  std::vector<double> noise_scale_;
};

/// One step of the active recurrence. Throws DimensionError on width mismatch.
std::vector<double> oracle_next_frame(const SyntheticDynamics& dyn, std::span<const double> p_t,
                                      std::span<const double> a_prev, std::span<const double> z, double noise_std,
                                      Rng& rng);

/// Planted latents and noiseless standardized trait scores, for tests.
struct SyntheticTruth {
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> trait_scores;  // u_k per subject, trait order
};

Dataset generate(const GeneratorConfig& config);
SyntheticTruth latent_truth(const Dataset& ds);

}  // namespace nfembed
