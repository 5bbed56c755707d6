#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nfembed/numerics/tensor.hpp"

namespace nfembed {

enum class Cohort : std::uint8_t { ptsd = 0, fibromyalgia = 1, control = 2, synthetic = 3 };

enum class NfExperience : std::uint8_t { none = 0, two_sessions = 1, six_sessions = 2 };

enum class Trait { tas20, stai, caps5, age, nf_experience };

inline constexpr std::array<Trait, 5> kAllTraits{Trait::tas20, Trait::stai, Trait::caps5, Trait::age,
                                                 Trait::nf_experience};

std::string_view cohort_name(Cohort c);
Cohort parse_cohort(std::string_view name);
std::string_view trait_name(Trait t);
Trait parse_trait(std::string_view name);
std::string_view nf_experience_name(NfExperience e);
NfExperience parse_nf_experience(std::string_view name);

/// Which trait scores a cohort carries: CAPS-5 for PTSD, demographics for
/// controls, everything for synthetic cohorts.
bool trait_available(Cohort cohort, Trait trait);
std::vector<Trait> available_traits(Cohort cohort);

/// Number of label classes: five quantization bins, or the three experience levels.
std::size_t trait_classes(Trait t);

struct TraitRecord {
  std::optional<double> tas20;
  std::optional<double> stai;
  std::optional<double> caps5;
  std::optional<double> age;
  std::optional<NfExperience> nf_experience;

  /// Raw value; experience levels map to 0, 1, 2.
  std::optional<double> value(Trait t) const;
  void set(Trait t, std::optional<double> v);

  friend bool operator==(const TraitRecord&, const TraitRecord&) = default;
};

struct FrameDims {
  std::uint16_t h = 0;
  std::uint16_t w = 0;
  std::uint16_t d = 0;
  std::size_t voxels() const { return std::size_t{h} * w * d; }
  friend bool operator==(const FrameDims&, const FrameDims&) = default;
};

/// Dataset-wide shape: M runs, each with T passive and T_active active frames.
struct DatasetLayout {
  FrameDims dims;
  std::uint16_t runs = 3;
  std::uint16_t passive_len = 14;
  std::uint16_t active_len = 14;
  Cohort cohort = Cohort::synthetic;

  std::size_t frame_size() const { return dims.voxels(); }
  std::size_t passive_values() const { return std::size_t{runs} * passive_len * frame_size(); }
  std::size_t active_values() const { return std::size_t{runs} * active_len * frame_size(); }
  friend bool operator==(const DatasetLayout&, const DatasetLayout&) = default;
};

enum class Phase { passive, active };

/// One H x W x D frame.
struct FrameTensor {
  FrameDims dims;
  std::vector<float> values;
};

struct SubjectRecord {
  std::string id;
  Cohort cohort = Cohort::synthetic;
  std::vector<float> passive;  // [run][time][voxel]
  std::vector<float> active;   // [run][time][voxel]
  TraitRecord traits;

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

struct Dataset {
  DatasetLayout layout;
  std::vector<SubjectRecord> subjects;
  /// Free-form generator/source provenance, stored in the container trailer.
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t index_of(std::string_view id) const;  // LookupError if absent
  const SubjectRecord& subject(std::string_view id) const;
  std::vector<std::string> ids() const;

  FrameTensor frame(const SubjectRecord& s, Phase phase, std::size_t run, std::size_t t) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.layout == b.layout && a.subjects == b.subjects && a.provenance == b.provenance;
  }
};

/// Throws DataError describing the first violated invariant: payload sizes,
/// unique ids, finite values, trait availability for the subject's cohort.
void validate(const Dataset& ds);

/// Per-subject frame sequences with runs concatenated in order.
struct SubjectSequences {
  Tensor passive;  // [M*T x F]
  Tensor active;   // [M*T_active x F]
};

SubjectSequences concat_runs(const DatasetLayout& layout, const SubjectRecord& subject);

/// z-score both phases with the subject's passive-phase mean and SD.
SubjectSequences normalize(SubjectSequences seq);

/// concat_runs followed by normalize.
SubjectSequences prepared_sequences(const DatasetLayout& layout, const SubjectRecord& subject);

/// subject_id,cohort,tas20,stai,caps5,age,nf_experience
std::string traits_csv(const Dataset& ds);

}  // namespace nfembed
