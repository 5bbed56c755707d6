#include "nfembed/synthgen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "nfembed/errors.hpp"

namespace nfembed {
namespace {

constexpr std::uint64_t kPatternStream = 0;

std::string subject_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%03zu", i);
  return buf;
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Unit-RMS smooth pattern per column, scaled so a standard normal z gives
// unit variance per voxel.
Tensor smooth_patterns(const Tensor& s, std::size_t cols, Rng& rng) {
  const std::size_t f = s.rows();
  Tensor out({f, cols});
  std::vector<double> xi(f);
  for (std::size_t c = 0; c < cols; ++c) {
    for (double& x : xi) x = rng.normal();
    std::vector<double> col(f, 0.0);
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) col[i] += s.at(i, j) * xi[j];
    const double rms = norm(col) / std::sqrt(static_cast<double>(f));
    for (std::size_t i = 0; i < f; ++i) out.at(i, c) = col[i] / (rms * std::sqrt(static_cast<double>(cols)));
  }
  return out;
}

template <class T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("generator.") + key + ": wrong type (" + it->type_name() + ")");
  }
}

}  // namespace

std::vector<std::vector<double>> GeneratorConfig::default_trait_weights(std::size_t latent_dim) {
  static const double base[5][4] = {
      {1.0, 0.5, 0.0, 0.0}, {0.0, 1.0, 0.5, 0.0}, {0.0, 0.0, 1.0, 0.5}, {0.5, 0.0, 0.0, 1.0}, {0.6, -0.6, 0.6, 0.0}};
  std::vector<std::vector<double>> w(5, std::vector<double>(latent_dim, 0.0));
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < latent_dim; ++j) w[k][j] = j < 4 ? base[k][j] : 0.0;
  return w;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ConfigError("generator." + field + ": " + msg);
  };
  if (n_subjects < 5) fail("n_subjects", "must be at least 5, got " + std::to_string(n_subjects));
  if (dims.h == 0 || dims.w == 0 || dims.d == 0) fail("dims", "all of H, W, D must be positive");
  if (runs == 0) fail("runs", "must be positive");
  if (passive_len == 0) fail("passive_len", "must be positive");
  if (active_len == 0) fail("active_len", "must be positive");
  if (latent_dim == 0) fail("latent_dim", "must be positive");
  if (!(noise_std >= 0) || !std::isfinite(noise_std)) fail("noise_std", "must be finite and >= 0");
  if (!(trait_noise >= 0) || !std::isfinite(trait_noise)) fail("trait_noise", "must be finite and >= 0");
  if (!(alpha >= 0 && alpha < 1)) fail("alpha", "must lie in [0, 1)");
  if (!std::isfinite(gamma)) fail("gamma", "must be finite");
  if (!std::isfinite(baseline_scale)) fail("baseline_scale", "must be finite");
  if (!(gain_scale >= 0 && gain_scale < 1)) fail("gain_scale", "must lie in [0, 1) so gains stay positive");
  if (!(passive_ar >= 0 && passive_ar < 1)) fail("passive_ar", "must lie in [0, 1)");
  if (!(smoothing >= 0) || !std::isfinite(smoothing)) fail("smoothing", "must be finite and >= 0");
  if (trait_weights.size() != 5) fail("trait_weights", "needs 5 rows, got " + std::to_string(trait_weights.size()));
  for (std::size_t k = 0; k < 5; ++k) {
    if (trait_weights[k].size() != latent_dim)
      fail("trait_weights", "row " + std::to_string(k) + " has " + std::to_string(trait_weights[k].size()) +
                                " entries, latent_dim is " + std::to_string(latent_dim));
    for (double v : trait_weights[k])
      if (!std::isfinite(v)) fail("trait_weights", "non-finite entry in row " + std::to_string(k));
  }
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"n_subjects", n_subjects},
          {"dims", {dims.h, dims.w, dims.d}},
          {"runs", runs},
          {"passive_len", passive_len},
          {"active_len", active_len},
          {"latent_dim", latent_dim},
          {"noise_std", noise_std},
          {"trait_noise", trait_noise},
          {"alpha", alpha},
          {"gamma", gamma},
          {"baseline_scale", baseline_scale},
          {"gain_scale", gain_scale},
          {"passive_ar", passive_ar},
          {"smoothing", smoothing},
          {"trait_weights", trait_weights},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("generator: config must be a JSON object");
  static const std::set<std::string> known{"n_subjects", "dims",   "runs",           "passive_len", "active_len",
                                           "latent_dim", "noise_std", "trait_noise", "alpha",       "gamma",
                                           "baseline_scale", "gain_scale", "passive_ar", "smoothing",
                                           "trait_weights", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("generator." + key + ": unknown field");

  GeneratorConfig c;
  c.n_subjects = field<std::size_t>(j, "n_subjects", c.n_subjects);
  if (j.contains("dims")) {
    const auto d = field<std::vector<int>>(j, "dims", {});
    if (d.size() != 3) throw ConfigError("generator.dims: expected [H, W, D]");
    for (int v : d)
      if (v <= 0 || v > 0xFFFF) throw ConfigError("generator.dims: entries must be in 1..65535");
    c.dims = {static_cast<std::uint16_t>(d[0]), static_cast<std::uint16_t>(d[1]), static_cast<std::uint16_t>(d[2])};
  }
  auto u16 = [&](const char* key, std::uint16_t fallback) {
    const long v = field<long>(j, key, fallback);
    if (v < 0 || v > 0xFFFF) throw ConfigError(std::string("generator.") + key + ": out of range");
    return static_cast<std::uint16_t>(v);
  };
  c.runs = u16("runs", c.runs);
  c.passive_len = u16("passive_len", c.passive_len);
  c.active_len = u16("active_len", c.active_len);
  c.latent_dim = field<std::size_t>(j, "latent_dim", c.latent_dim);
  c.noise_std = field<double>(j, "noise_std", c.noise_std);
  c.trait_noise = field<double>(j, "trait_noise", c.trait_noise);
  c.alpha = field<double>(j, "alpha", c.alpha);
  c.gamma = field<double>(j, "gamma", c.gamma);
  c.baseline_scale = field<double>(j, "baseline_scale", c.baseline_scale);
  c.gain_scale = field<double>(j, "gain_scale", c.gain_scale);
  c.passive_ar = field<double>(j, "passive_ar", c.passive_ar);
  c.smoothing = field<double>(j, "smoothing", c.smoothing);
  c.trait_weights = j.contains("trait_weights") ? field<std::vector<std::vector<double>>>(j, "trait_weights", {})
                                                : default_trait_weights(c.latent_dim);
  c.seed = field<std::uint64_t>(j, "seed", c.seed);
  c.validate();
  return c;
}

SyntheticDynamics::SyntheticDynamics(const GeneratorConfig& config)
    : f_(config.dims.voxels()),
      dz_(config.latent_dim),
      alpha_(config.alpha),
      gamma_(config.gamma),
      baseline_scale_(config.baseline_scale),
      gain_scale_(config.gain_scale),
      s_({f_, f_}) {
  const auto& d = config.dims;
  auto coord = [&](std::size_t v) {
    return std::array<double, 3>{static_cast<double>(v / (std::size_t{d.w} * d.d)),
                                 static_cast<double>((v / d.d) % d.w), static_cast<double>(v % d.d)};
  };
  for (std::size_t i = 0; i < f_; ++i) {
    const auto ci = coord(i);
    double total = 0;
    for (std::size_t j = 0; j < f_; ++j) {
      const auto cj = coord(j);
      const double r2 = (ci[0] - cj[0]) * (ci[0] - cj[0]) + (ci[1] - cj[1]) * (ci[1] - cj[1]) +
                        (ci[2] - cj[2]) * (ci[2] - cj[2]);
      const double k = config.smoothing > 0 ? std::exp(-r2 / (2 * config.smoothing * config.smoothing))
                                            : (i == j ? 1.0 : 0.0);
      s_.at(i, j) = k;
      total += k;
    }
    for (std::size_t j = 0; j < f_; ++j) s_.at(i, j) /= total;
  }
  noise_scale_.resize(f_);
  for (std::size_t i = 0; i < f_; ++i) noise_scale_[i] = 1.0 / norm(s_.row(i));

  Rng rng(derive_seed(config.seed, kPatternStream));
  b_ = smooth_patterns(s_, dz_, rng);
  g_ = smooth_patterns(s_, dz_, rng);
}

std::vector<double> SyntheticDynamics::baseline(std::span<const double> z) const {
  if (z.size() != dz_) throw DimensionError("baseline: latent width " + std::to_string(z.size()));
  std::vector<double> out(f_, 0.0);
  for (std::size_t i = 0; i < f_; ++i) {
    for (std::size_t j = 0; j < dz_; ++j) out[i] += b_.at(i, j) * z[j];
    out[i] *= baseline_scale_;
  }
  return out;
}

std::vector<double> SyntheticDynamics::gain(std::span<const double> z) const {
  if (z.size() != dz_) throw DimensionError("gain: latent width " + std::to_string(z.size()));
  std::vector<double> out(f_, 0.0);
  for (std::size_t i = 0; i < f_; ++i) {
    double gz = 0;
    for (std::size_t j = 0; j < dz_; ++j) gz += g_.at(i, j) * z[j];
    out[i] = 1.0 + gain_scale_ * std::tanh(gz);
  }
  return out;
}

std::vector<double> SyntheticDynamics::smooth(std::span<const double> x) const {
  if (x.size() != f_) throw DimensionError("smooth: frame width " + std::to_string(x.size()));
  std::vector<double> out(f_, 0.0);
  for (std::size_t i = 0; i < f_; ++i)
    for (std::size_t j = 0; j < f_; ++j) out[i] += s_.at(i, j) * x[j];
  return out;
}

std::vector<double> SyntheticDynamics::smooth_noise(Rng& rng) const {
  std::vector<double> xi(f_);
  for (double& x : xi) x = rng.normal();
  auto out = smooth(xi);
  for (std::size_t i = 0; i < f_; ++i) out[i] *= noise_scale_[i];
  return out;
}

std::vector<double> oracle_next_frame(const SyntheticDynamics& dyn, std::span<const double> p_t,
                                      std::span<const double> a_prev, std::span<const double> z, double noise_std,
                                      Rng& rng) {
  const std::size_t f = dyn.frame_size();
  if (p_t.size() != f || a_prev.size() != f)
    throw DimensionError("oracle_next_frame: frames of width " + std::to_string(p_t.size()) + " and " +
                         std::to_string(a_prev.size()) + ", expected " + std::to_string(f));
  if (z.size() != dyn.latent_dim())
    throw DimensionError("oracle_next_frame: latent width " + std::to_string(z.size()) + ", expected " +
                         std::to_string(dyn.latent_dim()));
  const auto b = dyn.baseline(z);
  const auto g = dyn.gain(z);
  const auto sp = dyn.smooth(p_t);
  std::vector<double> a(f);
  for (std::size_t i = 0; i < f; ++i) {
    a[i] = b[i] + dyn.alpha() * a_prev[i] + dyn.gamma() * g[i] * sp[i];
    if (noise_std > 0) a[i] += rng.normal(0.0, noise_std);
  }
  return a;
}

Dataset generate(const GeneratorConfig& config) {
  config.validate();
  const SyntheticDynamics dyn(config);
  const std::size_t f = dyn.frame_size();
  const std::size_t T = config.passive_len, Ta = config.active_len, M = config.runs;

  Dataset ds;
  ds.layout = {config.dims, config.runs, config.passive_len, config.active_len, Cohort::synthetic};
  nlohmann::json latents = nlohmann::json::array();
  nlohmann::json scores = nlohmann::json::array();

  for (std::size_t n = 0; n < config.n_subjects; ++n) {
    Rng rng(derive_seed(config.seed, n + 1));
    std::vector<double> z(config.latent_dim);
    for (double& v : z) v = rng.normal();

    std::array<double, 5> u{};
    for (std::size_t k = 0; k < 5; ++k) {
      const auto& w = config.trait_weights[k];
      const double wn = norm(w);
      const double nu = rng.normal();
      if (wn == 0) continue;
      double s = 0;
      for (std::size_t j = 0; j < z.size(); ++j) s += w[j] * z[j];
      u[k] = (s + config.trait_noise * wn * nu) / wn;
    }

    SubjectRecord rec;
    rec.id = subject_id(n);
    rec.cohort = Cohort::synthetic;
    rec.traits.tas20 = 50 + 11 * u[0];
    rec.traits.stai = 40 + 10 * u[1];
    rec.traits.caps5 = 35 + 12 * u[2];
    rec.traits.age = std::clamp(44 + 8.5 * u[3], 18.0, 70.0);
    rec.traits.nf_experience = u[4] <= -0.43  ? NfExperience::none
                               : u[4] <= 0.43 ? NfExperience::two_sessions
                                              : NfExperience::six_sessions;

    rec.passive.resize(M * T * f);
    rec.active.resize(M * Ta * f);
    std::vector<double> a_prev(f, 0.0);
    std::vector<double> p_run(T * f);
    const double rho = config.passive_ar;
    const double innov = std::sqrt(1 - rho * rho);
    for (std::size_t r = 0; r < M; ++r) {
      for (std::size_t t = 0; t < T; ++t) {
        const auto e = dyn.smooth_noise(rng);
        for (std::size_t i = 0; i < f; ++i)
          p_run[t * f + i] = t == 0 ? e[i] : rho * p_run[(t - 1) * f + i] + innov * e[i];
      }
      for (std::size_t i = 0; i < T * f; ++i) rec.passive[r * T * f + i] = static_cast<float>(p_run[i]);
      for (std::size_t t = 0; t < Ta; ++t) {
        // The stored float frame is what a model sees, so the recurrence runs on it too.
        std::vector<double> p(f);
        for (std::size_t i = 0; i < f; ++i) p[i] = rec.passive[(r * T + t % T) * f + i];
        auto a = oracle_next_frame(dyn, p, a_prev, z, config.noise_std, rng);
        for (std::size_t i = 0; i < f; ++i) {
          rec.active[(r * Ta + t) * f + i] = static_cast<float>(a[i]);
          a_prev[i] = rec.active[(r * Ta + t) * f + i];
        }
      }
    }
    latents.push_back(z);
    scores.push_back(u);
    ds.subjects.push_back(std::move(rec));
  }
  ds.provenance = {{"generator", config.to_json()}, {"latent_z", std::move(latents)}, {"trait_scores", scores}};
  validate(ds);
  return ds;
}

SyntheticTruth latent_truth(const Dataset& ds) {
  SyntheticTruth t;
  try {
    t.z = ds.provenance.at("latent_z").get<std::vector<std::vector<double>>>();
    t.trait_scores = ds.provenance.at("trait_scores").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("dataset carries no synthetic latent provenance");
  }
  return t;
}

}  // namespace nfembed
