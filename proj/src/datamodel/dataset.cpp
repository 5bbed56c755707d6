#include "nfembed/datamodel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "nfembed/errors.hpp"

namespace nfembed {

std::string_view cohort_name(Cohort c) {
  switch (c) {
    case Cohort::ptsd:
      return "ptsd";
    case Cohort::fibromyalgia:
      return "fibromyalgia";
    case Cohort::control:
      return "control";
    case Cohort::synthetic:
      return "synthetic";
  }
  return "unknown";
}

Cohort parse_cohort(std::string_view name) {
  for (Cohort c : {Cohort::ptsd, Cohort::fibromyalgia, Cohort::control, Cohort::synthetic})
    if (cohort_name(c) == name) return c;
  throw ConfigError("unknown cohort '" + std::string(name) + "'");
}

std::string_view trait_name(Trait t) {
  switch (t) {
    case Trait::tas20:
      return "tas20";
    case Trait::stai:
      return "stai";
    case Trait::caps5:
      return "caps5";
    case Trait::age:
      return "age";
    case Trait::nf_experience:
      return "nf_experience";
  }
  return "unknown";
}

Trait parse_trait(std::string_view name) {
  for (Trait t : kAllTraits)
    if (trait_name(t) == name) return t;
  throw ConfigError("unknown trait '" + std::string(name) + "'");
}

std::string_view nf_experience_name(NfExperience e) {
  switch (e) {
    case NfExperience::none:
      return "none";
    case NfExperience::two_sessions:
      return "two_sessions";
    case NfExperience::six_sessions:
      return "six_sessions";
  }
  return "unknown";
}

NfExperience parse_nf_experience(std::string_view name) {
  for (NfExperience e : {NfExperience::none, NfExperience::two_sessions, NfExperience::six_sessions})
    if (nf_experience_name(e) == name) return e;
  throw ConfigError("unknown neurofeedback experience level '" + std::string(name) + "'");
}

bool trait_available(Cohort cohort, Trait trait) {
  switch (trait) {
    case Trait::tas20:
    case Trait::stai:
      return true;
    case Trait::caps5:
      return cohort == Cohort::ptsd || cohort == Cohort::synthetic;
    case Trait::age:
    case Trait::nf_experience:
      return cohort == Cohort::control || cohort == Cohort::synthetic;
  }
  return false;
}

std::vector<Trait> available_traits(Cohort cohort) {
  std::vector<Trait> out;
  for (Trait t : kAllTraits)
    if (trait_available(cohort, t)) out.push_back(t);
  return out;
}

std::size_t trait_classes(Trait t) { return t == Trait::nf_experience ? 3 : 5; }

std::optional<double> TraitRecord::value(Trait t) const {
  switch (t) {
    case Trait::tas20:
      return tas20;
    case Trait::stai:
      return stai;
    case Trait::caps5:
      return caps5;
    case Trait::age:
      return age;
    case Trait::nf_experience:
      if (!nf_experience) return std::nullopt;
      return static_cast<double>(static_cast<int>(*nf_experience));
  }
  return std::nullopt;
}

void TraitRecord::set(Trait t, std::optional<double> v) {
  switch (t) {
    case Trait::tas20:
      tas20 = v;
      break;
    case Trait::stai:
      stai = v;
      break;
    case Trait::caps5:
      caps5 = v;
      break;
    case Trait::age:
      age = v;
      break;
    case Trait::nf_experience:
      if (!v) {
        nf_experience.reset();
      } else {
        const long level = std::lround(*v);
        if (level < 0 || level > 2) throw DataError("experience level " + std::to_string(level) + " outside 0..2");
        nf_experience = static_cast<NfExperience>(level);
      }
      break;
  }
}

std::size_t Dataset::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].id == id) return i;
  throw LookupError("unknown subject '" + std::string(id) + "'");
}

const SubjectRecord& Dataset::subject(std::string_view id) const { return subjects[index_of(id)]; }

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.id);
  return out;
}

FrameTensor Dataset::frame(const SubjectRecord& s, Phase phase, std::size_t run, std::size_t t) const {
  const std::size_t len = phase == Phase::passive ? layout.passive_len : layout.active_len;
  if (run >= layout.runs || t >= len)
    throw IndexError("frame: run " + std::to_string(run) + ", time " + std::to_string(t) + " outside " +
                     std::to_string(layout.runs) + " x " + std::to_string(len));
  const auto& src = phase == Phase::passive ? s.passive : s.active;
  const std::size_t f = layout.frame_size();
  const auto begin = src.begin() + static_cast<std::ptrdiff_t>((run * len + t) * f);
  return {layout.dims, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(f))};
}

void validate(const Dataset& ds) {
  const auto& L = ds.layout;
  if (L.dims.voxels() == 0) throw DataError("frame dimensions must be positive");
  if (L.runs == 0 || L.passive_len == 0 || L.active_len == 0)
    throw DataError("runs and sequence lengths must be positive");
  std::set<std::string> seen;
  for (const auto& s : ds.subjects) {
    if (s.id.empty()) throw DataError("empty subject id");
    if (!seen.insert(s.id).second) throw DataError("duplicate subject id '" + s.id + "'");
    if (s.passive.size() != L.passive_values())
      throw DataError("subject '" + s.id + "': " + std::to_string(s.passive.size()) + " passive values, expected " +
                      std::to_string(L.passive_values()));
    if (s.active.size() != L.active_values())
      throw DataError("subject '" + s.id + "': " + std::to_string(s.active.size()) + " active values, expected " +
                      std::to_string(L.active_values()));
    auto finite = [](float v) { return std::isfinite(v); };
    if (!std::all_of(s.passive.begin(), s.passive.end(), finite) ||
        !std::all_of(s.active.begin(), s.active.end(), finite))
      throw DataError("subject '" + s.id + "': non-finite frame value");
    for (Trait t : kAllTraits) {
      const auto v = s.traits.value(t);
      if (v && !trait_available(s.cohort, t))
        throw DataError("subject '" + s.id + "': trait " + std::string(trait_name(t)) + " not collected for cohort " +
                        std::string(cohort_name(s.cohort)));
      if (v && !std::isfinite(*v))
        throw DataError("subject '" + s.id + "': non-finite trait " + std::string(trait_name(t)));
    }
  }
}

SubjectSequences concat_runs(const DatasetLayout& layout, const SubjectRecord& subject) {
  const std::size_t f = layout.frame_size();
  const std::size_t np = std::size_t{layout.runs} * layout.passive_len;
  const std::size_t na = std::size_t{layout.runs} * layout.active_len;
  if (subject.passive.size() != np * f || subject.active.size() != na * f)
    throw DataError("subject '" + subject.id + "': payload does not match layout");
  // Storage is already run-major, so concatenation is a widening copy.
  return {Tensor::matrix(np, f, std::vector<double>(subject.passive.begin(), subject.passive.end())),
          Tensor::matrix(na, f, std::vector<double>(subject.active.begin(), subject.active.end()))};
}

SubjectSequences normalize(SubjectSequences seq) {
  const auto vals = seq.passive.values();
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(vals.size(), 1));
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= static_cast<double>(std::max<std::size_t>(vals.size(), 1));
  const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
  for (Tensor* t : {&seq.passive, &seq.active})
    for (double& v : t->values()) v = (v - mean) / sd;
  return seq;
}

SubjectSequences prepared_sequences(const DatasetLayout& layout, const SubjectRecord& subject) {
  return normalize(concat_runs(layout, subject));
}

std::string traits_csv(const Dataset& ds) {
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,cohort";
  for (Trait t : kAllTraits) out << ',' << trait_name(t);
  out << '\n';
  for (const auto& s : ds.subjects) {
    out << s.id << ',' << cohort_name(s.cohort);
    for (Trait t : kAllTraits) {
      out << ',';
      if (t == Trait::nf_experience) {
        if (s.traits.nf_experience) out << nf_experience_name(*s.traits.nf_experience);
      } else if (auto v = s.traits.value(t)) {
        out << *v;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace nfembed
