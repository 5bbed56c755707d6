#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfembed/datamodel/dataset.hpp"

namespace nfembed {

/// Five ranges around the mean: (-inf, mu-2s], (mu-2s, mu-s], (mu-s, mu+s],
/// (mu+s, mu+2s], (mu+2s, inf). Upper edges are inclusive.
struct QuantizationBins {
  double mu = 0.0;
  double sigma = 1.0;

  std::array<double, 4> edges() const { return {mu - 2 * sigma, mu - sigma, mu + sigma, mu + 2 * sigma}; }
};

/// Sample mean and unbiased (n-1) standard deviation. Throws DegenerateError
/// for fewer than two values or zero spread.
QuantizationBins fit_bins(std::span<const double> values);

/// Label 0..4. Throws LabelError for NaN.
int quantize(double value, const QuantizationBins& bins);

/// Maps raw trait values to class labels. Continuous traits use bins fitted on
/// the values passed to fit(); experience levels are already categorical.
class TraitLabeler {
 public:
  TraitLabeler() = default;
  static TraitLabeler fit(Trait trait, std::span<const double> train_values);

  Trait trait() const noexcept { return trait_; }
  std::size_t classes() const { return trait_classes(trait_); }
  int label(double value) const;
  const std::optional<QuantizationBins>& bins() const noexcept { return bins_; }

 private:
  Trait trait_ = Trait::tas20;
  std::optional<QuantizationBins> bins_;
};

/// Disjoint train/eval/test partition of subject ids.
struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> eval;
  std::vector<std::string> test;
};

/// 60-20-20 split: eval and test get floor(0.2 n) subjects each, train the
/// remainder. Deterministic in `seed`. Throws ConfigError below 5 subjects.
SplitSpec split_subjects(std::span<const std::string> ids, std::uint64_t seed);
SplitSpec split_subjects(const Dataset& ds, std::uint64_t seed);

}  // namespace nfembed
