#include <doctest.h>

#include <cmath>

#include "nfembed/datamodel/container.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/synthgen/generator.hpp"

using namespace nfembed;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.n_subjects = 8;
  c.dims = {3, 2, 3};
  c.passive_len = 5;
  c.active_len = 5;
  return c;
}

double corr(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("oracle zero case and determinism") {
  const auto cfg = small_config();
  const SyntheticDynamics dyn(cfg);
  const std::size_t f = dyn.frame_size();
  Rng rng(1);
  const std::vector<double> zero(f, 0.0), z0(cfg.latent_dim, 0.0);
  for (double v : oracle_next_frame(dyn, zero, zero, z0, 0.0, rng)) CHECK(v == 0.0);

  std::vector<double> p(f), a(f), z{0.3, -1.0, 0.5, 2.0};
  for (std::size_t i = 0; i < f; ++i) p[i] = std::sin(i), a[i] = std::cos(i);
  Rng r1(5), r2(6);
  CHECK(oracle_next_frame(dyn, p, a, z, 0.0, r1) == oracle_next_frame(dyn, p, a, z, 0.0, r2));

  const std::vector<double> wrong(f + 1, 0.0);
  CHECK_THROWS_AS(oracle_next_frame(dyn, wrong, a, z, 0.0, rng), DimensionError);
}

TEST_CASE("oracle matches the closed form across subjects") {
  const auto cfg = small_config();
  const SyntheticDynamics dyn(cfg);
  const std::size_t f = dyn.frame_size();
  std::vector<double> p(f), a(f);
  for (std::size_t i = 0; i < f; ++i) p[i] = 0.1 * static_cast<double>(i) - 0.5, a[i] = std::sin(3.0 * i);
  const std::vector<double> z1{1, 0, -1, 0.5}, z2{-0.2, 0.7, 0.1, -1.5};
  Rng rng(0);
  const auto y1 = oracle_next_frame(dyn, p, a, z1, 0.0, rng);
  const auto y2 = oracle_next_frame(dyn, p, a, z2, 0.0, rng);

  // Independent evaluation straight from the stored matrices.
  const auto& S = dyn.smoothing_matrix();
  const auto& B = dyn.baseline_patterns();
  const auto& G = dyn.gain_patterns();
  for (std::size_t i = 0; i < f; ++i) {
    double sp = 0, db = 0, g1 = 0, g2 = 0;
    for (std::size_t j = 0; j < f; ++j) sp += S.at(i, j) * p[j];
    for (std::size_t k = 0; k < 4; ++k) {
      db += B.at(i, k) * (z1[k] - z2[k]);
      g1 += G.at(i, k) * z1[k];
      g2 += G.at(i, k) * z2[k];
    }
    const double expect =
        cfg.baseline_scale * db + cfg.gamma * cfg.gain_scale * (std::tanh(g1) - std::tanh(g2)) * sp;
    CHECK(y1[i] - y2[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("smoothing rows are normalized") {
  const SyntheticDynamics dyn(small_config());
  const auto& S = dyn.smoothing_matrix();
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double s = 0;
    for (double v : S.row(i)) s += v;
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("generate is deterministic and valid") {
  const auto cfg = small_config();
  const Dataset a = generate(cfg);
  const Dataset b = generate(cfg);
  CHECK(encode_dataset(a) == encode_dataset(b));
  CHECK_NOTHROW(validate(a));
  CHECK(decode_dataset(encode_dataset(a)) == a);
  CHECK(a.subjects.size() == 8);
  CHECK(a.subjects[3].id == "syn-003");

  auto other = cfg;
  other.seed = 2;
  CHECK(generate(other).subjects[0].active != a.subjects[0].active);
}

TEST_CASE("generated active frames follow the oracle") {
  auto cfg = small_config();
  cfg.noise_std = 0.0;
  cfg.active_len = 7;  // exercises the t mod T pairing
  const Dataset ds = generate(cfg);
  const SyntheticDynamics dyn(cfg);
  const auto truth = latent_truth(ds);
  const std::size_t f = dyn.frame_size();
  const auto& s = ds.subjects[2];
  std::vector<double> prev(f, 0.0);
  Rng unused(0);
  for (std::size_t r = 0; r < cfg.runs; ++r)
    for (std::size_t t = 0; t < cfg.active_len; ++t) {
      std::vector<double> p(f);
      for (std::size_t i = 0; i < f; ++i) p[i] = s.passive[(r * cfg.passive_len + t % cfg.passive_len) * f + i];
      const auto a = oracle_next_frame(dyn, p, prev, truth.z[2], 0.0, unused);
      for (std::size_t i = 0; i < f; ++i) {
        const float stored = s.active[(r * cfg.active_len + t) * f + i];
        CHECK(stored == static_cast<float>(a[i]));
        prev[i] = stored;
      }
    }
}

TEST_CASE("zero trait weight row gives a constant trait") {
  auto cfg = small_config();
  cfg.noise_std = 0.0;
  cfg.trait_weights[1] = {0, 0, 0, 0};
  const Dataset ds = generate(cfg);
  for (const auto& s : ds.subjects) CHECK(*s.traits.stai == 40.0);
}

TEST_CASE("default config traits track the latent") {
  GeneratorConfig cfg;
  cfg.trait_noise = 0.0;
  const Dataset ds = generate(cfg);
  CHECK(ds.subjects.size() == 60);
  CHECK(ds.layout.dims == FrameDims{6, 5, 6});
  const auto truth = latent_truth(ds);
  for (Trait t : {Trait::tas20, Trait::stai, Trait::caps5}) {
    const auto k = static_cast<std::size_t>(t);
    std::vector<double> proj, trait;
    for (std::size_t n = 0; n < ds.subjects.size(); ++n) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += cfg.trait_weights[k][j] * truth.z[n][j];
      proj.push_back(s);
      trait.push_back(*ds.subjects[n].traits.value(t));
    }
    CHECK(std::abs(corr(proj, trait)) > 0.99);
  }
}

TEST_CASE("passive frames have unit scale") {
  GeneratorConfig cfg;
  cfg.n_subjects = 20;
  const Dataset ds = generate(cfg);
  double ss = 0;
  std::size_t n = 0;
  for (const auto& s : ds.subjects)
    for (float v : s.passive) ss += v * v, ++n;
  CHECK(std::sqrt(ss / static_cast<double>(n)) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("config validation and json") {
  GeneratorConfig cfg;
  CHECK(GeneratorConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  auto bad = cfg;
  bad.noise_std = -1;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("noise_std"), ConfigError);
  bad = cfg;
  bad.n_subjects = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dims = {0, 5, 6};
  CHECK_THROWS_AS(generate(bad), ConfigError);
  CHECK_THROWS_WITH_AS(GeneratorConfig::from_json({{"noise", 1}}), doctest::Contains("unknown"), ConfigError);
  CHECK_THROWS_WITH_AS(GeneratorConfig::from_json({{"alpha", "x"}}), doctest::Contains("alpha"), ConfigError);
  const auto partial = GeneratorConfig::from_json({{"n_subjects", 12}, {"dims", {10, 8, 10}}});
  CHECK(partial.n_subjects == 12);
  CHECK(partial.dims == FrameDims{10, 8, 10});
  CHECK(partial.noise_std == cfg.noise_std);
}
