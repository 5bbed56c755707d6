#include "nfembed/eval/audit.hpp"

namespace nfembed {

nlohmann::json AuditSummary::to_json() const {
  return {{"train_target_reads", train_target_reads},
          {"test_target_reads_before_scoring", test_target_reads_before_scoring},
          {"test_target_reads_at_scoring", test_target_reads_at_scoring},
          {"feature_reads", feature_reads}};
}

AuditSummary AuditSummary::from_json(const nlohmann::json& j) {
  return {j.at("train_target_reads").get<std::size_t>(), j.at("test_target_reads_before_scoring").get<std::size_t>(),
          j.at("test_target_reads_at_scoring").get<std::size_t>(), j.at("feature_reads").get<std::size_t>()};
}

LabelStore::LabelStore(const Dataset& ds, std::span<const std::string> test_ids)
    : ds_(&ds), test_(test_ids.begin(), test_ids.end()) {}

std::optional<double> LabelStore::read(std::string_view id, Trait trait, LabelUse use) {
  const SubjectRecord& s = ds_->subject(id);
  log_.push_back({s.id, trait, use, test_.contains(id), scoring_open_});
  return s.traits.value(trait);
}

TraitRecord LabelStore::record(std::string_view id, LabelUse use, std::optional<Trait> withheld) {
  TraitRecord out;
  for (Trait t : kAllTraits)
    if (t != withheld) out.set(t, read(id, t, use));
  return out;
}

AuditSummary LabelStore::summary() const {
  AuditSummary s;
  for (const auto& a : log_) {
    if (a.use == LabelUse::feature)
      ++s.feature_reads;
    else if (!a.test_subject)
      ++s.train_target_reads;
    else if (a.scoring_open)
      ++s.test_target_reads_at_scoring;
    else
      ++s.test_target_reads_before_scoring;
  }
  return s;
}

}  // namespace nfembed
