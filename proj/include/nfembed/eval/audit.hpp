#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nfembed/datamodel/dataset.hpp"

namespace nfembed {

/// Why a trait value was read: as the label a method is trained or scored
/// on, or as an input feature (the clinical baseline regresses one trait on
/// the others).
enum class LabelUse { target, feature };

struct LabelAccess {
  std::string subject_id;
  Trait trait = Trait::tas20;
  LabelUse use = LabelUse::target;
  bool test_subject = false;
  bool scoring_open = false;
};

struct AuditSummary {
  std::size_t train_target_reads = 0;
  std::size_t test_target_reads_before_scoring = 0;
  std::size_t test_target_reads_at_scoring = 0;
  std::size_t feature_reads = 0;

  nlohmann::json to_json() const;
  static AuditSummary from_json(const nlohmann::json& j);
  friend bool operator==(const AuditSummary&, const AuditSummary&) = default;
};

/// Trait values of a dataset behind an access log. Every read is recorded
/// with the subject's split role and whether final scoring has begun.
class LabelStore {
 public:
  LabelStore(const Dataset& ds, std::span<const std::string> test_ids);

  /// Throws LookupError for an unknown subject.
  std::optional<double> read(std::string_view id, Trait trait, LabelUse use);
  /// Every trait of a subject, each read logged; `withheld` comes back empty
  /// and is not read.
  TraitRecord record(std::string_view id, LabelUse use, std::optional<Trait> withheld = std::nullopt);

  void open_scoring() noexcept { scoring_open_ = true; }
  bool scoring_open() const noexcept { return scoring_open_; }

  const std::vector<LabelAccess>& log() const noexcept { return log_; }
  AuditSummary summary() const;

 private:
  const Dataset* ds_;
  std::set<std::string, std::less<>> test_;
  bool scoring_open_ = false;
  std::vector<LabelAccess> log_;
};

}  // namespace nfembed
