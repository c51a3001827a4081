#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace regjudge {

enum class Region { CN, US };

std::string_view to_string(Region region);
// Accepts "CN"/"US" case-insensitively; nullopt otherwise.
std::optional<Region> parse_region(std::string_view s);

enum class LanguagePreference { EnFirst, CnFirst };

std::string_view to_string(LanguagePreference pref);
std::optional<LanguagePreference> parse_language_preference(std::string_view s);

struct StandardDates {
  std::string published;
  std::string effective;

  bool operator==(const StandardDates&) const = default;
};

// One regulatory standard. `id` is kept exactly as published; every lookup
// goes through `norm_id`.
struct StandardRecord {
  std::string id;
  std::string norm_id;
  std::optional<std::string> title_cn;
  std::optional<std::string> title_en;
  std::optional<std::string> scope_cn;
  std::optional<std::string> scope_en;
  std::optional<std::string> usage_condition;
  std::optional<std::string> limitation;
  std::string source_text;
  Region region = Region::CN;
  std::string status;
  std::optional<StandardDates> dates;
  std::string organization;
  std::vector<std::string> technical_field;
  std::vector<std::string> tags;
  std::optional<std::string> clause;
  std::optional<std::string> url;

  bool repealed() const;
  // Display name: English title when present, Chinese title otherwise.
  std::string name() const;

  bool operator==(const StandardRecord&) const = default;
};

nlohmann::json to_json(const StandardRecord& record);

// Lowercases, drops ":YYYY" edition markers and trailing "-YYYY" year
// suffixes, then removes whitespace and "/". Dots are kept, so
// "21 CFR 862.1345" -> "21cfr862.1345" and "YY 0667-2008" -> "yy0667".
// Throws Error{InvalidIdentifier} on blank input.
std::string normalize_standard_id(std::string_view raw);

// Title, scope, usage condition and limitation joined by '\n', each in the
// preferred language when both exist. Falls back to source_text.
std::string compose_segment_text(const StandardRecord& record,
                                 LanguagePreference pref);

// All text fields of a record in one string; used for keyword matching.
std::string record_search_text(const StandardRecord& record);

struct CorpusReject {
  std::size_t index = 0;
  std::string id;
  std::string reason;
};

nlohmann::json to_json(const std::vector<CorpusReject>& rejects);

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<StandardRecord> records, std::string source_path);

  const std::vector<StandardRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::string& source_path() const { return source_path_; }

  const StandardRecord* find(std::string_view norm_id, Region region) const;
  // Every region's record for a norm_id, in file order.
  std::vector<const StandardRecord*> find_all(std::string_view norm_id) const;

  // SHA-256 over the canonical serialization.
  std::string content_hash() const;
  nlohmann::json to_json() const;

 private:
  std::vector<StandardRecord> records_;
  std::map<std::pair<std::string, Region>, std::size_t> by_norm_id_;
  std::string source_path_;
};

struct CorpusLoadResult {
  Corpus corpus;
  std::vector<CorpusReject> rejects;
};

// Parses a JSON array of records. Both the bilingual field set and the flat
// export shape ("name", "scope", "org") are accepted. Records that break an
// invariant are returned as rejects, never dropped silently.
CorpusLoadResult parse_corpus(const nlohmann::json& array,
                              std::string source_path = {});
CorpusLoadResult load_corpus(const std::string& path);

}  // namespace regjudge
