#include "nfembed/datamodel/labels.hpp"

#include <cmath>

#include "nfembed/errors.hpp"
#include "nfembed/numerics/rng.hpp"

namespace nfembed {

QuantizationBins fit_bins(std::span<const double> values) {
  if (values.size() < 2) throw DegenerateError("fit_bins: need at least two values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  if (!(sd > 0.0)) throw DegenerateError("fit_bins: all values equal, no spread to quantize");
  return {mean, sd};
}

int quantize(double value, const QuantizationBins& bins) {
  if (std::isnan(value)) throw LabelError("quantize: NaN value");
  int label = 0;
  for (double edge : bins.edges())
    if (value > edge) ++label;
  return label;
}

TraitLabeler TraitLabeler::fit(Trait trait, std::span<const double> train_values) {
  TraitLabeler l;
  l.trait_ = trait;
  if (trait != Trait::nf_experience) l.bins_ = fit_bins(train_values);
  return l;
}

int TraitLabeler::label(double value) const {
  if (trait_ == Trait::nf_experience) {
    if (std::isnan(value)) throw LabelError("experience level is NaN");
    const long level = std::lround(value);
    if (level < 0 || level > 2) throw LabelError("experience level " + std::to_string(level) + " outside 0..2");
    return static_cast<int>(level);
  }
  return quantize(value, *bins_);
}

SplitSpec split_subjects(std::span<const std::string> ids, std::uint64_t seed) {
  if (ids.size() < 5)
    throw ConfigError("split_subjects: need at least 5 subjects, have " + std::to_string(ids.size()));
  std::vector<std::string> order(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, 0x5911));
  rng.shuffle(std::span<std::string>(order));

  const std::size_t n = order.size();
  const std::size_t n_eval = n / 5;
  const std::size_t n_test = n / 5;
  const std::size_t n_train = n - n_eval - n_test;
  SplitSpec s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                order.begin() + static_cast<std::ptrdiff_t>(n_train + n_eval));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_eval), order.end());
  return s;
}

SplitSpec split_subjects(const Dataset& ds, std::uint64_t seed) {
  const auto ids = ds.ids();
  return split_subjects(ids, seed);
}

}  // namespace nfembed
