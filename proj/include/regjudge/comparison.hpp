#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/corpus.hpp"
#include "regjudge/embedding.hpp"
#include "regjudge/reasoning.hpp"

namespace regjudge {

// Curated cross-region counterparts: {group_key: {"CN": id, "US": id}}.
// Ids are normalized on load. Never inferred.
class EquivalenceMap {
 public:
  EquivalenceMap() = default;

  void add(const std::string& key, Region region, std::string_view standard_id);
  std::optional<std::string> key_for(Region region, const std::string& norm_id) const;
  bool empty() const { return by_member_.empty(); }
  std::size_t size() const { return keys_.size(); }

  static EquivalenceMap from_json(const nlohmann::json& j);
  static EquivalenceMap load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::map<Region, std::string>> keys_;
  std::map<std::pair<Region, std::string>, std::string> by_member_;
};

struct AlignedGroup {
  std::string key;
  std::map<Region, ApplicabilityJudgment> members;

  bool operator==(const AlignedGroup&) const = default;
};

// Groups by norm_id (or the equivalence key), sorted by key. Two judgments
// from the same region landing in one group is Error{DuplicateMember}.
std::vector<AlignedGroup> align_groups(const std::vector<ApplicabilityJudgment>& judgments,
                                       const EquivalenceMap& equivalence = {});

enum class FlagKind { ConflictDetected, ClauseMismatch, JustificationDivergence };

std::string_view to_string(FlagKind k);
std::optional<FlagKind> parse_flag_kind(std::string_view s);

struct ConflictFlag {
  FlagKind kind = FlagKind::ConflictDetected;
  std::string group_key;
  std::string details;
  std::optional<double> similarity;

  bool operator==(const ConflictFlag&) const = default;
};

nlohmann::json to_json(const ConflictFlag& f);
ConflictFlag flag_from_json(const nlohmann::json& j);

struct DetectOptions {
  double divergence_threshold = 0.75;
  RegionMode mode = RegionMode::Single;
  std::set<Region> target_regions;
};

struct DetectResult {
  std::vector<ConflictFlag> flags;
  // Set when the justification check could not run (no encoder, or the
  // provider failed); the other checks still ran.
  bool divergence_skipped = false;
  std::string warning;
};

// Per group with two or more members: label disagreement, clause mismatch
// (both present, different after trimming) and justification divergence
// (cosine below the threshold). Under CROSS mode with both regions targeted a
// single-region group is a Conflict_Detected "absent in <region>". Flags come
// out in group order, then in the kind order above.
DetectResult detect_conflicts(const std::vector<AlignedGroup>& groups, Encoder* encoder,
                              const DetectOptions& options);

struct ComplianceMatrix {
  std::string device_text;
  RegionMode mode = RegionMode::Single;
  std::set<Region> target_regions;
  std::vector<AlignedGroup> groups;
  std::vector<ConflictFlag> conflict_flags;
  // Region -> label -> count over group members.
  std::map<Region, std::map<Applicability, int>> region_summaries;
  // One plain-language line per Conflict_Detected flag.
  std::vector<nlohmann::json> gap_analysis;
  nlohmann::json recommendations = nlohmann::json::array();
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const ComplianceMatrix&) const = default;
};

ComplianceMatrix build_matrix(std::string_view device_text, RegionMode mode,
                              std::set<Region> target_regions,
                              std::vector<AlignedGroup> groups,
                              std::vector<ConflictFlag> flags);

nlohmann::json to_json(const ComplianceMatrix& m);
ComplianceMatrix matrix_from_json(const nlohmann::json& j);
// Sorted keys, two-space indent, trailing newline.
std::string serialize_matrix(const ComplianceMatrix& m);

// Flat export: one row per (group, target region); a region without a member
// is written with applicability "absent".
std::string matrix_to_csv(const ComplianceMatrix& m);

}  // namespace regjudge
