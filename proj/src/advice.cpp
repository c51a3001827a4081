#include "regjudge/advice.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "regjudge/errors.hpp"
#include "regjudge/hash.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

std::string_view to_string(RecommendationKind k) {
  switch (k) {
    case RecommendationKind::ConformityTesting: return "ConformityTesting";
    case RecommendationKind::SupplementaryStandard: return "SupplementaryStandard";
    case RecommendationKind::RegulatoryPathway: return "RegulatoryPathway";
    case RecommendationKind::ConflictResolution: return "ConflictResolution";
  }
  return "SupplementaryStandard";
}

std::optional<RecommendationKind> parse_recommendation_kind(std::string_view s) {
  for (auto k : {RecommendationKind::ConformityTesting, RecommendationKind::SupplementaryStandard,
                 RecommendationKind::RegulatoryPathway, RecommendationKind::ConflictResolution}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

json to_json(const Recommendation& r) {
  return {{"kind", std::string(to_string(r.kind))},
          {"text", r.text},
          {"triggered_by", r.triggered_by},
          {"related", r.related}};
}

json to_json(const std::vector<Recommendation>& rs) {
  json arr = json::array();
  for (const auto& r : rs) arr.push_back(to_json(r));
  return arr;
}

std::vector<Recommendation> recommendations_from_json(const json& arr) {
  std::vector<Recommendation> out;
  for (const auto& j : arr) {
    const auto kind = parse_recommendation_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::InvalidInput, "unknown recommendation kind");
    out.push_back({*kind, j.at("text").get<std::string>(), j.at("triggered_by").get<std::string>(),
                   j.value("related", std::vector<std::string>{})});
  }
  return out;
}

namespace {

[[noreturn]] void rule_error(const std::string& id, const std::string& what) {
  throw Error(ErrorCode::RuleConfigError, "rule '" + id + "': " + what);
}

template <typename T, typename Parse>
std::optional<T> optional_enum(const json& when, const char* key, Parse parse,
                               const std::string& id) {
  if (!when.contains(key)) return std::nullopt;
  if (!when[key].is_string()) rule_error(id, std::string(key) + " must be a string");
  auto v = parse(when[key].get<std::string>());
  if (!v) rule_error(id, "unknown value for " + std::string(key));
  return v;
}

json rule_to_json(const AdviceRule& r) {
  json when = json::object();
  if (r.when.applicability) when["applicability"] = std::string(to_string(*r.when.applicability));
  if (r.when.judgment_region) when["judgment_region"] = std::string(to_string(*r.when.judgment_region));
  if (!r.when.keywords_any.empty()) when["keywords_any"] = r.when.keywords_any;
  if (r.when.flag_kind) when["flag_kind"] = std::string(to_string(*r.when.flag_kind));
  if (r.when.no_flag_kind) when["no_flag_kind"] = std::string(to_string(*r.when.no_flag_kind));
  if (r.when.target_region) when["target_region"] = std::string(to_string(*r.when.target_region));
  if (r.when.min_groups) when["min_groups"] = r.when.min_groups;
  return {{"id", r.id},
          {"stage", r.stage == RuleStage::Suggest ? "suggest" : "follow_up"},
          {"kind", std::string(to_string(r.kind))},
          {"when", when},
          {"action_text", r.action_text},
          {"references", r.references}};
}

std::string fill(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [name, value] : values) {
    const std::string placeholder = "{" + name + "}";
    for (auto pos = text.find(placeholder); pos != std::string::npos;
         pos = text.find(placeholder, pos + value.size())) {
      text.replace(pos, placeholder.size(), value);
    }
  }
  return text;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

bool keywords_hit(const RuleCondition& when, std::string_view device_text) {
  if (when.keywords_any.empty()) return true;
  return std::any_of(when.keywords_any.begin(), when.keywords_any.end(),
                     [&](const std::string& k) { return text::contains_word(device_text, k); });
}

bool target_hit(const RuleCondition& when, const std::set<Region>& targets) {
  return !when.target_region || targets.count(*when.target_region);
}

bool judgment_matches(const RuleCondition& when, const ApplicabilityJudgment& j) {
  return (!when.applicability || j.applicability == *when.applicability) &&
         (!when.judgment_region || j.region == *when.judgment_region);
}

bool has_judgment_condition(const RuleCondition& when) {
  return when.applicability.has_value() || when.judgment_region.has_value();
}

// Appends unless a recommendation with the same kind and text is already there.
void emit(std::vector<Recommendation>& out, Recommendation r) {
  const bool dup = std::any_of(out.begin(), out.end(), [&](const Recommendation& o) {
    return o.kind == r.kind && o.text == r.text;
  });
  if (!dup) out.push_back(std::move(r));
}

}  // namespace

RuleSet::RuleSet(std::vector<AdviceRule> rules) : rules_(std::move(rules)) {
  json canonical = json::array();
  std::set<std::string> ids;
  for (const auto& r : rules_) {
    if (r.id.empty()) rule_error(r.id, "missing id");
    if (!ids.insert(r.id).second) rule_error(r.id, "duplicate id");
    if (r.action_text.empty()) rule_error(r.id, "missing action_text");
    if (r.stage == RuleStage::Suggest &&
        (r.when.flag_kind || r.when.no_flag_kind || r.when.min_groups)) {
      rule_error(r.id, "flag and group conditions only apply to follow_up rules");
    }
    canonical.push_back(rule_to_json(r));
  }
  version_ = sha256_hex(canonical.dump()).substr(0, 12);
}

RuleSet RuleSet::from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::RuleConfigError, "rule file must be a JSON array");
  std::vector<AdviceRule> rules;
  for (const auto& r : j) {
    if (!r.is_object()) throw Error(ErrorCode::RuleConfigError, "rule must be an object");
    AdviceRule rule;
    rule.id = r.value("id", "");
    try {
      const auto stage = r.value("stage", "suggest");
      if (stage == "suggest") {
        rule.stage = RuleStage::Suggest;
      } else if (stage == "follow_up") {
        rule.stage = RuleStage::FollowUp;
      } else {
        rule_error(rule.id, "unknown stage " + stage);
      }
      const auto kind = parse_recommendation_kind(r.at("kind").get<std::string>());
      if (!kind) rule_error(rule.id, "unknown kind");
      rule.kind = *kind;
      const json when = r.value("when", json::object());
      static const std::set<std::string> known = {"applicability", "judgment_region",
                                                  "keywords_any", "flag_kind", "no_flag_kind",
                                                  "target_region", "min_groups"};
      for (const auto& [key, _] : when.items()) {
        if (!known.count(key)) rule_error(rule.id, "unknown condition " + key);
      }
      rule.when.applicability =
          optional_enum<Applicability>(when, "applicability", parse_applicability, rule.id);
      rule.when.judgment_region =
          optional_enum<Region>(when, "judgment_region", parse_region, rule.id);
      rule.when.target_region = optional_enum<Region>(when, "target_region", parse_region, rule.id);
      rule.when.flag_kind = optional_enum<FlagKind>(when, "flag_kind", parse_flag_kind, rule.id);
      rule.when.no_flag_kind =
          optional_enum<FlagKind>(when, "no_flag_kind", parse_flag_kind, rule.id);
      rule.when.keywords_any = when.value("keywords_any", std::vector<std::string>{});
      rule.when.min_groups = when.value("min_groups", std::size_t{0});
      rule.action_text = r.at("action_text").get<std::string>();
      rule.references = r.value("references", std::vector<std::string>{});
    } catch (const json::exception& e) {
      rule_error(rule.id, e.what());
    }
    rules.push_back(std::move(rule));
  }
  return RuleSet(std::move(rules));
}

RuleSet RuleSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::RuleConfigError, "cannot read rule file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::RuleConfigError, path.string() + ": " + e.what());
  }
}

const AdviceRule* RuleSet::find(std::string_view id) const {
  for (const auto& r : rules_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::vector<Recommendation> RuleSet::suggest(const std::vector<ApplicabilityJudgment>& judgments,
                                             std::string_view device_text,
                                             const std::set<Region>& target_regions) const {
  std::vector<Recommendation> out;
  for (const auto& rule : rules_) {
    if (rule.stage != RuleStage::Suggest) continue;
    if (!keywords_hit(rule.when, device_text) || !target_hit(rule.when, target_regions)) continue;
    std::vector<std::string> matched;
    if (has_judgment_condition(rule.when)) {
      for (const auto& j : judgments) {
        if (judgment_matches(rule.when, j)) push_unique(matched, j.standard_id);
      }
      if (matched.empty()) continue;
    }
    std::vector<std::string> related = matched;
    for (const auto& ref : rule.references) push_unique(related, ref);
    const std::string region =
        rule.when.judgment_region ? std::string(to_string(*rule.when.judgment_region)) : "";
    emit(out, {rule.kind,
               fill(rule.action_text, {{"standards", join(related)}, {"region", region}}),
               rule.id, related});
  }
  return out;
}

std::vector<Recommendation> RuleSet::follow_up(const ComplianceMatrix& matrix,
                                               const std::set<Region>& target_regions) const {
  std::vector<Recommendation> out;
  for (const auto& rule : rules_) {
    if (rule.stage != RuleStage::FollowUp) continue;
    const auto& when = rule.when;
    if (matrix.groups.size() < when.min_groups) continue;
    if (!keywords_hit(when, matrix.device_text) || !target_hit(when, target_regions)) continue;
    if (when.no_flag_kind &&
        std::any_of(matrix.conflict_flags.begin(), matrix.conflict_flags.end(),
                    [&](const ConflictFlag& f) { return f.kind == *when.no_flag_kind; })) {
      continue;
    }
    std::vector<std::string> matched;
    if (has_judgment_condition(when)) {
      for (const auto& g : matrix.groups) {
        for (const auto& [_, j] : g.members) {
          if (judgment_matches(when, j)) push_unique(matched, j.standard_id);
        }
      }
      if (matched.empty()) continue;
    }
    const std::string region =
        when.target_region ? std::string(to_string(*when.target_region)) : "";

    if (!when.flag_kind) {
      std::vector<std::string> related = matched;
      for (const auto& ref : rule.references) push_unique(related, ref);
      emit(out, {rule.kind,
                 fill(rule.action_text, {{"standards", join(related)}, {"region", region}}),
                 rule.id, related});
      continue;
    }
    for (const auto& f : matrix.conflict_flags) {
      if (f.kind != *when.flag_kind) continue;
      std::vector<std::string> related;
      for (const auto& g : matrix.groups) {
        if (g.key != f.group_key) continue;
        for (const auto& [_, j] : g.members) push_unique(related, j.standard_id);
      }
      for (const auto& ref : rule.references) push_unique(related, ref);
      emit(out, {rule.kind,
                 fill(rule.action_text, {{"standards", join(related)},
                                         {"group", join(related)},
                                         {"details", f.details},
                                         {"region", region}}),
                 rule.id, related});
    }
  }
  return out;
}

}  // namespace regjudge
