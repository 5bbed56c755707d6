#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace nfembed {

/// Child seed for (master, index). Two rounds of the splitmix64 finalizer over
/// the master seed and the index; a pure function, so any component can derive
/// its own stream without coordinating with the others.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Master seed plus a derivation counter.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const noexcept { return master_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t child(std::uint64_t index) const { return derive_seed(master_, index); }
  SeedStream fork(std::uint64_t index) const { return SeedStream(child(index)); }

  /// Sequential draw: child(counter++).
  std::uint64_t next() { return child(counter_++); }

 private:
  std::uint64_t master_;
  std::uint64_t counter_ = 0;
};

/// Sampling front end over mt19937_64. Distributions are implemented here
/// rather than with <random> adaptors, whose output is not specified across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Box-Muller; consumes two uniforms per call.
  double normal(double mean = 0.0, double sd = 1.0);

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nfembed
