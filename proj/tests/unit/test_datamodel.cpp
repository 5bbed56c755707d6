#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "nfembed/datamodel/container.hpp"
#include "nfembed/datamodel/dataset.hpp"
#include "nfembed/datamodel/labels.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/numerics/rng.hpp"

using namespace nfembed;

namespace {

Dataset random_dataset(std::size_t n, std::uint64_t seed, FrameDims dims = {2, 3, 2}, std::uint16_t runs = 3,
                       std::uint16_t t = 4, std::uint16_t ta = 5) {
  Rng rng(seed);
  Dataset ds;
  ds.layout = {dims, runs, t, ta, Cohort::synthetic};
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = "s" + std::to_string(i);
    s.cohort = Cohort::synthetic;
    s.passive.resize(ds.layout.passive_values());
    s.active.resize(ds.layout.active_values());
    for (float& v : s.passive) v = static_cast<float>(rng.normal());
    for (float& v : s.active) v = static_cast<float>(rng.normal());
    s.traits.tas20 = rng.normal(50, 10);
    s.traits.stai = rng.normal(40, 10);
    s.traits.caps5 = rng.normal(35, 12);
    s.traits.age = rng.uniform(18, 70);
    s.traits.nf_experience = static_cast<NfExperience>(rng.index(3));
    ds.subjects.push_back(std::move(s));
  }
  ds.provenance = {{"seed", seed}};
  return ds;
}

}  // namespace

TEST_CASE("concat_runs keeps run order and length") {
  Dataset ds = random_dataset(1, 3, {1, 1, 1}, 3, 14, 14);
  auto& s = ds.subjects[0];
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t t = 0; t < 14; ++t) s.passive[r * 14 + t] = static_cast<float>(100 * r + t);
  const auto seq = concat_runs(ds.layout, s);
  CHECK(seq.passive.rows() == 42);
  CHECK(seq.active.rows() == 42);
  for (std::size_t i = 0; i < 42; ++i) CHECK(seq.passive.at(i, 0) == 100.0 * (i / 14) + i % 14);

  Dataset one = random_dataset(1, 4, {2, 2, 1}, 1, 5, 5);
  const auto seq1 = concat_runs(one.layout, one.subjects[0]);
  for (std::size_t i = 0; i < one.subjects[0].passive.size(); ++i)
    CHECK(seq1.passive.data()[i] == static_cast<double>(one.subjects[0].passive[i]));
}

TEST_CASE("normalize uses passive statistics") {
  Dataset ds = random_dataset(1, 5);
  const auto seq = prepared_sequences(ds.layout, ds.subjects[0]);
  double m = 0, v = 0;
  for (double x : seq.passive.values()) m += x;
  m /= static_cast<double>(seq.passive.size());
  for (double x : seq.passive.values()) v += (x - m) * (x - m);
  v /= static_cast<double>(seq.passive.size());
  CHECK(m == doctest::Approx(0).epsilon(1e-12));
  CHECK(v == doctest::Approx(1).epsilon(1e-12));
}

TEST_CASE("fit_bins") {
  const std::vector<double> a{0, 0, 2, 2};
  const auto b = fit_bins(a);
  CHECK(b.mu == doctest::Approx(1.0));
  CHECK(b.sigma == doctest::Approx(std::sqrt(4.0 / 3.0)));
  CHECK(b.sigma == doctest::Approx(1.1547).epsilon(1e-4));
  const std::vector<double> flat{5, 5, 5};
  CHECK_THROWS_AS(fit_bins(flat), DegenerateError);
  const std::vector<double> single{1};
  CHECK_THROWS_AS(fit_bins(single), DegenerateError);
  const std::vector<double> sym{-1, 1};
  CHECK(fit_bins(sym).mu == 0.0);
  const auto e = b.edges();
  for (std::size_t i = 1; i < e.size(); ++i) CHECK(e[i] > e[i - 1]);
}

TEST_CASE("quantize boundaries") {
  const QuantizationBins b{0.0, 1.0};
  CHECK(quantize(0.0, b) == 2);
  CHECK(quantize(-2.0, b) == 0);
  CHECK(quantize(-1.0, b) == 1);
  CHECK(quantize(1.0, b) == 2);
  CHECK(quantize(2.0, b) == 3);
  CHECK(quantize(1.5, b) == 3);
  CHECK(quantize(2.0000001, b) == 4);
  CHECK(quantize(-1e300, b) == 0);
  CHECK_THROWS_AS(quantize(std::nan(""), b), LabelError);

  int prev = 0;
  for (double x = -5; x <= 5; x += 0.01) {
    const int l = quantize(x, b);
    CHECK(l >= prev);
    prev = l;
  }
}

TEST_CASE("normal sample label frequencies") {
  Rng rng(123);
  std::vector<double> xs(100000);
  for (double& x : xs) x = rng.normal(3.0, 2.0);
  const auto b = fit_bins(xs);
  std::array<double, 5> freq{};
  for (double x : xs) freq[static_cast<std::size_t>(quantize(x, b))] += 1.0;
  // Oracle: standard normal masses of the five ranges from erfc.
  const auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const std::array<double, 5> expect{phi(-2), phi(-1) - phi(-2), phi(1) - phi(-1), phi(2) - phi(1), 1 - phi(2)};
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(freq[k] / 1e5 - expect[k]) < 0.02);
}

TEST_CASE("trait labeler") {
  const std::vector<double> train{10, 20, 30, 40, 50};
  const auto l = TraitLabeler::fit(Trait::tas20, train);
  CHECK(l.classes() == 5);
  CHECK(l.label(30) == 2);
  const auto nf = TraitLabeler::fit(Trait::nf_experience, train);
  CHECK(nf.classes() == 3);
  CHECK(nf.label(2) == 2);
  CHECK_THROWS_AS(nf.label(3), LabelError);
}

TEST_CASE("split sizes") {
  auto ids = [](std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("id" + std::to_string(i));
    return v;
  };
  const auto s10 = split_subjects(ids(10), 1);
  CHECK(s10.train.size() == 6);
  CHECK(s10.eval.size() == 2);
  CHECK(s10.test.size() == 2);
  const auto s87 = split_subjects(ids(87), 1);
  CHECK(s87.train.size() == 53);
  CHECK(s87.eval.size() == 17);
  CHECK(s87.test.size() == 17);
  CHECK_THROWS_AS(split_subjects(ids(4), 1), ConfigError);

  const auto a = split_subjects(ids(30), 77);
  const auto b = split_subjects(ids(30), 77);
  CHECK(a.train == b.train);
  CHECK(a.eval == b.eval);
  CHECK(a.test == b.test);
  CHECK(split_subjects(ids(30), 78).train != a.train);
}

TEST_CASE("split partitions are disjoint and exhaustive") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 5 + seed % 40;
    std::vector<std::string> all;
    for (std::size_t i = 0; i < n; ++i) all.push_back("x" + std::to_string(i));
    const auto s = split_subjects(all, seed);
    std::set<std::string> seen;
    for (const auto* part : {&s.train, &s.eval, &s.test})
      for (const auto& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == n);
  }
}

TEST_CASE("validation") {
  Dataset ds = random_dataset(3, 9);
  CHECK_NOTHROW(validate(ds));
  auto dup = ds;
  dup.subjects[1].id = dup.subjects[0].id;
  CHECK_THROWS_AS(validate(dup), DataError);
  auto nonfinite = ds;
  nonfinite.subjects[0].active[3] = std::nanf("");
  CHECK_THROWS_AS(validate(nonfinite), DataError);
  auto mask = ds;
  mask.subjects[0].cohort = Cohort::fibromyalgia;
  CHECK_THROWS_AS(validate(mask), DataError);
  CHECK_THROWS_AS(ds.index_of("nobody"), LookupError);
  CHECK_THROWS_AS(ds.frame(ds.subjects[0], Phase::active, 3, 0), IndexError);
  CHECK(ds.frame(ds.subjects[0], Phase::active, 1, 2).values[0] == ds.subjects[0].active[(5 + 2) * 12]);
}

TEST_CASE("container round-trip") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Dataset ds = random_dataset(4 + seed, seed, {static_cast<std::uint16_t>(seed), 2, 3}, 2, 3, 1 + seed);
    CHECK(decode_dataset(encode_dataset(ds)) == ds);
  }
  const Dataset big = random_dataset(60, 11);
  const auto path = (std::filesystem::temp_directory_path() / "nfembed_test_roundtrip.nfe").string();
  save_dataset(big, path);
  const Dataset back = load_dataset(path);
  std::filesystem::remove(path);
  REQUIRE(back.subjects.size() == 60);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(back.subjects[i].traits == big.subjects[i].traits);
    for (Trait t : kAllTraits) CHECK(back.subjects[i].traits.value(t) == big.subjects[i].traits.value(t));
  }
  CHECK(back == big);
}

TEST_CASE("container corruption") {
  const Dataset ds = random_dataset(5, 4);
  const std::string bytes = encode_dataset(ds);

  auto magic = bytes;
  magic[0] = 'X';
  try {
    decode_dataset(magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_dataset(version), FormatError);

  try {
    decode_dataset(std::string_view(bytes).substr(0, 100));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() <= 100);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  auto trailer = bytes;
  trailer.back() = '#';
  CHECK_THROWS_AS(decode_dataset(trailer), FormatError);
}

TEST_CASE("traits csv") {
  Dataset ds = random_dataset(2, 1);
  ds.subjects[1].traits.caps5.reset();
  const auto csv = traits_csv(ds);
  CHECK(csv.rfind("subject_id,cohort,tas20,stai,caps5,age,nf_experience\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
