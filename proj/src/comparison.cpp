#include "regjudge/comparison.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

namespace {

constexpr Region kRegions[] = {Region::CN, Region::US};
constexpr Applicability kLabels[] = {Applicability::Mandatory, Applicability::Recommended,
                                     Applicability::NotApplicable};

std::string region_name(Region r) { return std::string(to_string(r)); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Equivalence map

void EquivalenceMap::add(const std::string& key, Region region, std::string_view standard_id) {
  const auto norm = normalize_standard_id(standard_id);
  auto& slot = keys_[key];
  if (slot.count(region)) {
    throw Error(ErrorCode::ConfigError,
                "equivalence entry '" + key + "' lists two " + region_name(region) + " ids");
  }
  const auto [it, inserted] = by_member_.emplace(std::make_pair(region, norm), key);
  if (!inserted && it->second != key) {
    throw Error(ErrorCode::ConfigError, norm + " (" + region_name(region) +
                                            ") appears in equivalence entries '" + it->second +
                                            "' and '" + key + "'");
  }
  slot[region] = norm;
}

std::optional<std::string> EquivalenceMap::key_for(Region region,
                                                   const std::string& norm_id) const {
  auto it = by_member_.find({region, norm_id});
  if (it == by_member_.end()) return std::nullopt;
  return it->second;
}

EquivalenceMap EquivalenceMap::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "equivalence map must be an object");
  EquivalenceMap m;
  for (const auto& [key, members] : j.items()) {
    if (!members.is_object()) {
      throw Error(ErrorCode::ConfigError, "equivalence entry '" + key + "' must be an object");
    }
    for (const auto& [region, id] : members.items()) {
      const auto r = parse_region(region);
      if (!r || !id.is_string()) {
        throw Error(ErrorCode::ConfigError, "bad member '" + region + "' in entry '" + key + "'");
      }
      m.add(key, *r, id.get<std::string>());
    }
  }
  return m;
}

EquivalenceMap EquivalenceMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

json EquivalenceMap::to_json() const {
  json j = json::object();
  for (const auto& [key, members] : keys_) {
    for (const auto& [region, id] : members) j[key][region_name(region)] = id;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Alignment

std::vector<AlignedGroup> align_groups(const std::vector<ApplicabilityJudgment>& judgments,
                                       const EquivalenceMap& equivalence) {
  std::map<std::string, AlignedGroup> groups;
  for (const auto& j : judgments) {
    if (j.norm_id.empty()) {
      throw Error(ErrorCode::InvalidInput, "judgment for " + j.standard_id + " has no norm_id");
    }
    const std::string key = equivalence.key_for(j.region, j.norm_id).value_or(j.norm_id);
    auto& g = groups[key];
    g.key = key;
    if (!g.members.emplace(j.region, j).second) {
      throw Error(ErrorCode::DuplicateMember, "group '" + key + "' already has a " +
                                                  region_name(j.region) + " member");
    }
  }
  std::vector<AlignedGroup> out;
  out.reserve(groups.size());
  for (auto& [_, g] : groups) out.push_back(std::move(g));
  return out;
}

// ---------------------------------------------------------------------------
// Flags

std::string_view to_string(FlagKind k) {
  switch (k) {
    case FlagKind::ConflictDetected: return "Conflict_Detected";
    case FlagKind::ClauseMismatch: return "Clause_Mismatch";
    case FlagKind::JustificationDivergence: return "Justification_Divergence";
  }
  return "Conflict_Detected";
}

std::optional<FlagKind> parse_flag_kind(std::string_view s) {
  for (auto k : {FlagKind::ConflictDetected, FlagKind::ClauseMismatch,
                 FlagKind::JustificationDivergence}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

json to_json(const ConflictFlag& f) {
  json j = {{"kind", std::string(to_string(f.kind))},
            {"group_key", f.group_key},
            {"details", f.details}};
  if (f.similarity) j["similarity"] = *f.similarity;
  return j;
}

ConflictFlag flag_from_json(const json& j) {
  ConflictFlag f;
  const auto kind = parse_flag_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::InvalidInput, "unknown flag kind");
  f.kind = *kind;
  f.group_key = j.at("group_key").get<std::string>();
  f.details = j.at("details").get<std::string>();
  if (j.contains("similarity")) f.similarity = j["similarity"].get<double>();
  return f;
}

DetectResult detect_conflicts(const std::vector<AlignedGroup>& groups, Encoder* encoder,
                              const DetectOptions& options) {
  DetectResult result;
  const bool check_absence = options.mode == RegionMode::Cross &&
                             options.target_regions.count(Region::CN) &&
                             options.target_regions.count(Region::US);
  bool divergence_enabled = encoder != nullptr;
  if (!divergence_enabled) {
    result.divergence_skipped = true;
    result.warning = "no embedding provider; justification divergence not checked";
  }

  for (const auto& g : groups) {
    if (g.members.size() == 1) {
      if (check_absence) {
        const Region present = g.members.begin()->first;
        const Region missing = present == Region::CN ? Region::US : Region::CN;
        result.flags.push_back(
            {FlagKind::ConflictDetected, g.key, "absent in " + region_name(missing), {}});
      }
      continue;
    }
    if (g.members.size() < 2) continue;
    const auto& a = g.members.at(Region::CN);
    const auto& b = g.members.at(Region::US);

    if (a.applicability != b.applicability) {
      result.flags.push_back({FlagKind::ConflictDetected, g.key,
                              "CN: " + std::string(to_string(a.applicability)) +
                                  " vs US: " + std::string(to_string(b.applicability)),
                              {}});
    }
    if (a.clause && b.clause) {
      const auto ca = text::trim(*a.clause);
      const auto cb = text::trim(*b.clause);
      if (ca != cb) {
        result.flags.push_back(
            {FlagKind::ClauseMismatch, g.key, "CN: '" + ca + "' vs US: '" + cb + "'", {}});
      }
    }
    if (divergence_enabled && !text::trim(a.justification).empty() &&
        !text::trim(b.justification).empty()) {
      try {
        const auto va = encoder->embed_text(a.justification);
        const auto vb = encoder->embed_text(b.justification);
        const double sim = std::clamp(cosine(va, vb), -1.0, 1.0);
        if (sim < options.divergence_threshold) {
          std::ostringstream details;
          details << "justification similarity " << sim << " below "
                  << options.divergence_threshold;
          result.flags.push_back(
              {FlagKind::JustificationDivergence, g.key, details.str(), sim});
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderError && e.code() != ErrorCode::Timeout) throw;
        spdlog::warn("justification divergence check skipped: {}", e.what());
        divergence_enabled = false;
        result.divergence_skipped = true;
        result.warning = std::string("embedding provider failed: ") + e.what();
        // Drop divergence flags from earlier groups so the report is all or nothing.
        std::erase_if(result.flags, [](const ConflictFlag& f) {
          return f.kind == FlagKind::JustificationDivergence;
        });
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Matrix

namespace {

json gap_entry(const AlignedGroup& g, const ConflictFlag& f) {
  json standards = json::array();
  for (const auto& [region, m] : g.members) {
    standards.push_back(m.standard_id + " (" + region_name(region) + ")");
  }
  std::string interpretation;
  if (g.members.size() == 1) {
    const auto& [region, m] = *g.members.begin();
    interpretation = m.standard_id + " is " + std::string(to_string(m.applicability)) +
                     " in " + region_name(region) + " with no aligned standard in the other "
                     "jurisdiction; requirements it covers need separate evidence there.";
  } else {
    const auto& cn = g.members.at(Region::CN);
    const auto& us = g.members.at(Region::US);
    interpretation = cn.standard_id + " is " + std::string(to_string(cn.applicability)) +
                     " in CN while " + us.standard_id + " is " +
                     std::string(to_string(us.applicability)) +
                     " in US; the stricter classification should drive the shared test plan.";
  }
  return {{"group_key", g.key},
          {"standards", standards},
          {"details", f.details},
          {"interpretation", interpretation}};
}

}  // namespace

ComplianceMatrix build_matrix(std::string_view device_text, RegionMode mode,
                              std::set<Region> target_regions,
                              std::vector<AlignedGroup> groups,
                              std::vector<ConflictFlag> flags) {
  ComplianceMatrix m;
  m.device_text = std::string(device_text);
  m.mode = mode;
  m.target_regions = std::move(target_regions);
  m.groups = std::move(groups);
  m.conflict_flags = std::move(flags);

  std::map<std::string, const AlignedGroup*> by_key;
  for (const auto& g : m.groups) by_key[g.key] = &g;
  for (const auto& f : m.conflict_flags) {
    if (!by_key.count(f.group_key)) {
      throw Error(ErrorCode::InvalidInput, "flag references unknown group " + f.group_key);
    }
  }

  for (Region r : m.target_regions) {
    for (auto label : kLabels) m.region_summaries[r][label] = 0;
  }
  for (const auto& g : m.groups) {
    for (const auto& [region, j] : g.members) {
      for (auto label : kLabels) m.region_summaries[region].try_emplace(label, 0);
      ++m.region_summaries[region][j.applicability];
    }
  }
  for (const auto& f : m.conflict_flags) {
    if (f.kind == FlagKind::ConflictDetected) {
      m.gap_analysis.push_back(gap_entry(*by_key.at(f.group_key), f));
    }
  }
  return m;
}

json to_json(const ComplianceMatrix& m) {
  json groups = json::array();
  for (const auto& g : m.groups) {
    json members = json::object();
    for (const auto& [region, j] : g.members) members[region_name(region)] = to_json(j);
    groups.push_back({{"key", g.key}, {"members", members}});
  }
  json flags = json::array();
  for (const auto& f : m.conflict_flags) flags.push_back(to_json(f));
  json summaries = json::object();
  for (const auto& [region, counts] : m.region_summaries) {
    json c = json::object();
    for (const auto& [label, n] : counts) c[std::string(to_string(label))] = n;
    summaries[region_name(region)] = c;
  }
  json targets = json::array();
  for (Region r : m.target_regions) targets.push_back(region_name(r));
  return {{"device_text", m.device_text},
          {"region_mode", std::string(to_string(m.mode))},
          {"target_regions", targets},
          {"groups", groups},
          {"conflict_flags", flags},
          {"region_summaries", summaries},
          {"gap_analysis", m.gap_analysis},
          {"recommendations", m.recommendations},
          {"metadata", m.metadata}};
}

ComplianceMatrix matrix_from_json(const json& j) {
  ComplianceMatrix m;
  m.device_text = j.at("device_text").get<std::string>();
  const auto mode = j.at("region_mode").get<std::string>();
  if (mode != "SINGLE" && mode != "CROSS") {
    throw Error(ErrorCode::InvalidInput, "unknown region_mode " + mode);
  }
  m.mode = mode == "CROSS" ? RegionMode::Cross : RegionMode::Single;
  for (const auto& r : j.at("target_regions")) {
    const auto region = parse_region(r.get<std::string>());
    if (!region) throw Error(ErrorCode::InvalidInput, "unknown target region");
    m.target_regions.insert(*region);
  }
  for (const auto& g : j.at("groups")) {
    AlignedGroup group;
    group.key = g.at("key").get<std::string>();
    for (const auto& [region, member] : g.at("members").items()) {
      const auto r = parse_region(region);
      if (!r) throw Error(ErrorCode::InvalidInput, "unknown member region " + region);
      group.members.emplace(*r, judgment_from_json(member));
    }
    m.groups.push_back(std::move(group));
  }
  for (const auto& f : j.at("conflict_flags")) m.conflict_flags.push_back(flag_from_json(f));
  for (const auto& [region, counts] : j.at("region_summaries").items()) {
    const auto r = parse_region(region);
    if (!r) throw Error(ErrorCode::InvalidInput, "unknown summary region " + region);
    for (const auto& [label, n] : counts.items()) {
      const auto a = parse_applicability(label);
      if (!a) throw Error(ErrorCode::InvalidInput, "unknown summary label " + label);
      m.region_summaries[*r][*a] = n.get<int>();
    }
  }
  for (const auto& g : j.at("gap_analysis")) m.gap_analysis.push_back(g);
  m.recommendations = j.at("recommendations");
  m.metadata = j.at("metadata");
  return m;
}

std::string serialize_matrix(const ComplianceMatrix& m) { return to_json(m).dump(2) + "\n"; }

std::string matrix_to_csv(const ComplianceMatrix& m) {
  std::string out = "group_key,region,standard_id,name,applicability,clause,flags\n";
  std::set<Region> regions = m.target_regions;
  for (const auto& g : m.groups) {
    for (const auto& [r, _] : g.members) regions.insert(r);
  }
  for (const auto& g : m.groups) {
    std::string kinds;
    for (const auto& f : m.conflict_flags) {
      if (f.group_key != g.key) continue;
      kinds += (kinds.empty() ? "" : ";") + std::string(to_string(f.kind));
    }
    for (Region r : kRegions) {
      if (!regions.count(r)) continue;
      const auto it = g.members.find(r);
      std::vector<std::string> row = {g.key, region_name(r)};
      if (it == g.members.end()) {
        row.insert(row.end(), {"", "", "absent", ""});
      } else {
        const auto& j = it->second;
        row.insert(row.end(), {j.standard_id, j.name, std::string(to_string(j.applicability)),
                               j.clause.value_or("")});
      }
      row.push_back(kinds);
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_field(row[i]);
      }
      out.push_back('\n');
    }
  }
  return out;
}

}  // namespace regjudge
