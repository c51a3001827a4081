#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/comparison.hpp"
#include "regjudge/corpus.hpp"
#include "regjudge/reasoning.hpp"

namespace regjudge {

enum class RecommendationKind {
  ConformityTesting,
  SupplementaryStandard,
  RegulatoryPathway,
  ConflictResolution
};

std::string_view to_string(RecommendationKind k);
std::optional<RecommendationKind> parse_recommendation_kind(std::string_view s);

struct Recommendation {
  RecommendationKind kind = RecommendationKind::SupplementaryStandard;
  std::string text;
  std::string triggered_by;
  std::vector<std::string> related;

  bool operator==(const Recommendation&) const = default;
};

nlohmann::json to_json(const Recommendation& r);
nlohmann::json to_json(const std::vector<Recommendation>& rs);
std::vector<Recommendation> recommendations_from_json(const nlohmann::json& arr);

// Every condition that is present must hold.
struct RuleCondition {
  // Some judgment (or matrix member) carries this label ...
  std::optional<Applicability> applicability;
  // ... in this region.
  std::optional<Region> judgment_region;
  // Whole-word, case-insensitive match of any keyword in the device text.
  std::vector<std::string> keywords_any;
  // One recommendation per matching flag.
  std::optional<FlagKind> flag_kind;
  // No flag of this kind exists in the matrix.
  std::optional<FlagKind> no_flag_kind;
  std::optional<Region> target_region;
  std::size_t min_groups = 0;
};

enum class RuleStage { Suggest, FollowUp };

struct AdviceRule {
  std::string id;
  RuleStage stage = RuleStage::Suggest;
  RecommendationKind kind = RecommendationKind::SupplementaryStandard;
  RuleCondition when;
  // May contain {standards}, {group}, {details} and {region}.
  std::string action_text;
  std::vector<std::string> references;
};

// Ordered, read-only rule set. The version is a digest of the rule content.
class RuleSet {
 public:
  RuleSet() = default;
  explicit RuleSet(std::vector<AdviceRule> rules);

  // Accepts a JSON array of rules. Throws Error{RuleConfigError}.
  static RuleSet from_json(const nlohmann::json& j);
  static RuleSet load(const std::filesystem::path& path);

  const std::vector<AdviceRule>& rules() const { return rules_; }
  const std::string& version() const { return version_; }
  const AdviceRule* find(std::string_view id) const;

  // Suggest-stage rules over enriched judgments and the device text.
  std::vector<Recommendation> suggest(const std::vector<ApplicabilityJudgment>& judgments,
                                      std::string_view device_text,
                                      const std::set<Region>& target_regions) const;

  // Follow-up rules over a built matrix.
  std::vector<Recommendation> follow_up(const ComplianceMatrix& matrix,
                                        const std::set<Region>& target_regions) const;

 private:
  std::vector<AdviceRule> rules_;
  std::string version_;
};

}  // namespace regjudge
