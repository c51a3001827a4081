#include "regjudge/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "regjudge/errors.hpp"
#include "regjudge/hash.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

std::string_view to_string(Region region) {
  return region == Region::CN ? "CN" : "US";
}

std::optional<Region> parse_region(std::string_view s) {
  const auto lower = text::to_lower_ascii(text::trim(s));
  if (lower == "cn") return Region::CN;
  if (lower == "us") return Region::US;
  return std::nullopt;
}

std::string_view to_string(LanguagePreference pref) {
  return pref == LanguagePreference::EnFirst ? "EN_FIRST" : "CN_FIRST";
}

std::optional<LanguagePreference> parse_language_preference(std::string_view s) {
  const auto lower = text::to_lower_ascii(text::trim(s));
  if (lower == "en_first" || lower == "en") return LanguagePreference::EnFirst;
  if (lower == "cn_first" || lower == "cn") return LanguagePreference::CnFirst;
  return std::nullopt;
}

namespace {

bool has_text(const std::optional<std::string>& s) {
  return s && !text::trim(*s).empty();
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool all_digits(std::string_view s) {
  for (char c : s) {
    if (!is_digit(c)) return false;
  }
  return true;
}

// One pass of the id rules; normalize_standard_id iterates it to a fixpoint.
std::string normalize_once(const std::string& in) {
  std::string s;
  s.reserve(in.size());
  for (char c : in) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '/') continue;
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }

  // ":YYYY" edition markers, wherever they occur.
  for (std::size_t pos = s.find(':'); pos != std::string::npos;
       pos = s.find(':', pos)) {
    const bool marker = pos + 5 <= s.size() &&
                        all_digits(std::string_view(s).substr(pos + 1, 4)) &&
                        (pos + 5 == s.size() || !is_digit(s[pos + 5]));
    if (marker) {
      s.erase(pos, 5);
    } else {
      ++pos;
    }
  }

  // Trailing "-YYYY" year suffix.
  if (s.size() > 5 && s[s.size() - 5] == '-' &&
      all_digits(std::string_view(s).substr(s.size() - 4))) {
    s.erase(s.size() - 5);
  }
  return s;
}

std::optional<std::string> opt_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw std::invalid_argument(std::string("field '") + key +
                                "' must be a string");
  }
  return it->get<std::string>();
}

std::vector<std::string> string_list(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (it->is_string()) return {it->get<std::string>()};
  if (!it->is_array()) {
    throw std::invalid_argument(std::string("field '") + key +
                                "' must be a list of strings");
  }
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) {
      throw std::invalid_argument(std::string("field '") + key +
                                  "' must be a list of strings");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::size_t line_of_offset(const std::string& content, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < content.size(); ++i) {
    if (content[i] == '\n') ++line;
  }
  return line;
}

}  // namespace

std::string normalize_standard_id(std::string_view raw) {
  const auto folded = text::trim(text::fold_unicode(raw));
  if (folded.empty()) {
    throw Error(ErrorCode::InvalidIdentifier, "standard id is empty");
  }
  std::string current = folded;
  for (;;) {
    auto next = normalize_once(current);
    if (next == current) break;
    current = std::move(next);
  }
  if (current.empty()) {
    throw Error(ErrorCode::InvalidIdentifier,
                "standard id '" + std::string(raw) + "' normalizes to nothing");
  }
  return current;
}

bool StandardRecord::repealed() const {
  return text::to_lower_ascii(text::trim(status)) == "repealed";
}

std::string StandardRecord::name() const {
  if (has_text(title_en)) return *title_en;
  if (has_text(title_cn)) return *title_cn;
  return id;
}

std::string compose_segment_text(const StandardRecord& record,
                                 LanguagePreference pref) {
  auto pick = [pref](const std::optional<std::string>& en,
                     const std::optional<std::string>& cn)
      -> std::optional<std::string> {
    const auto& first = pref == LanguagePreference::EnFirst ? en : cn;
    const auto& second = pref == LanguagePreference::EnFirst ? cn : en;
    if (has_text(first)) return text::trim(*first);
    if (has_text(second)) return text::trim(*second);
    return std::nullopt;
  };

  std::vector<std::string> segments;
  if (auto t = pick(record.title_en, record.title_cn)) segments.push_back(*t);
  if (auto s = pick(record.scope_en, record.scope_cn)) segments.push_back(*s);
  if (has_text(record.usage_condition)) {
    segments.push_back(text::trim(*record.usage_condition));
  }
  if (has_text(record.limitation)) {
    segments.push_back(text::trim(*record.limitation));
  }
  if (segments.empty()) return text::trim(record.source_text);

  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out.push_back('\n');
    out += segments[i];
  }
  return out;
}

std::string record_search_text(const StandardRecord& record) {
  std::string out = record.id;
  auto add = [&out](const std::optional<std::string>& s) {
    if (has_text(s)) {
      out.push_back('\n');
      out += *s;
    }
  };
  add(record.title_en);
  add(record.title_cn);
  add(record.scope_en);
  add(record.scope_cn);
  add(record.usage_condition);
  add(record.limitation);
  add(record.source_text);
  for (const auto& t : record.technical_field) add(t);
  for (const auto& t : record.tags) add(t);
  return out;
}

json to_json(const StandardRecord& r) {
  json j = json::object();
  j["id"] = r.id;
  j["norm_id"] = r.norm_id;
  auto put = [&j](const char* key, const std::optional<std::string>& v) {
    if (v) j[key] = *v;
  };
  put("title_cn", r.title_cn);
  put("title_en", r.title_en);
  put("scope_cn", r.scope_cn);
  put("scope_en", r.scope_en);
  put("usage_condition", r.usage_condition);
  put("limitation", r.limitation);
  j["source_text"] = r.source_text;
  j["region"] = std::string(to_string(r.region));
  j["status"] = r.status;
  if (r.dates) {
    j["dates"] = {{"published", r.dates->published},
                  {"effective", r.dates->effective}};
  }
  j["organization"] = r.organization;
  j["technical_field"] = r.technical_field;
  j["tags"] = r.tags;
  put("clause", r.clause);
  put("url", r.url);
  return j;
}

json to_json(const std::vector<CorpusReject>& rejects) {
  json arr = json::array();
  for (const auto& r : rejects) {
    arr.push_back({{"index", r.index}, {"id", r.id}, {"reason", r.reason}});
  }
  return arr;
}

Corpus::Corpus(std::vector<StandardRecord> records, std::string source_path)
    : records_(std::move(records)), source_path_(std::move(source_path)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] =
        by_norm_id_.emplace(std::pair{records_[i].norm_id, records_[i].region}, i);
    if (!inserted) {
      throw Error(ErrorCode::InvalidInput,
                  "duplicate (norm_id, region): " + records_[i].norm_id + "/" +
                      std::string(to_string(records_[i].region)));
    }
  }
}

const StandardRecord* Corpus::find(std::string_view norm_id, Region region) const {
  auto it = by_norm_id_.find(std::pair{std::string(norm_id), region});
  return it == by_norm_id_.end() ? nullptr : &records_[it->second];
}

std::vector<const StandardRecord*> Corpus::find_all(std::string_view norm_id) const {
  std::vector<const StandardRecord*> out;
  for (const auto& r : records_) {
    if (r.norm_id == norm_id) out.push_back(&r);
  }
  return out;
}

json Corpus::to_json() const {
  json arr = json::array();
  for (const auto& r : records_) arr.push_back(regjudge::to_json(r));
  return arr;
}

std::string Corpus::content_hash() const { return sha256_hex(to_json().dump()); }

CorpusLoadResult parse_corpus(const json& array, std::string source_path) {
  if (!array.is_array()) {
    throw ParseError("corpus must be a JSON array of records", 1);
  }
  std::vector<StandardRecord> records;
  std::vector<CorpusReject> rejects;
  std::map<std::pair<std::string, Region>, std::size_t> seen;

  for (std::size_t i = 0; i < array.size(); ++i) {
    const auto& obj = array[i];
    CorpusReject reject{i, "", ""};
    if (!obj.is_object()) {
      reject.reason = "record is not an object";
      rejects.push_back(reject);
      continue;
    }
    try {
      StandardRecord r;
      const auto id = opt_string(obj, "id");
      reject.id = id.value_or("");
      if (!id || text::trim(*id).empty()) {
        reject.reason = "missing id";
        rejects.push_back(reject);
        continue;
      }
      r.id = text::trim(*id);
      r.norm_id = normalize_standard_id(r.id);

      const auto region = opt_string(obj, "region");
      if (!region) {
        reject.reason = "missing region";
        rejects.push_back(reject);
        continue;
      }
      const auto parsed_region = parse_region(*region);
      if (!parsed_region) {
        reject.reason = "invalid region '" + *region + "'";
        rejects.push_back(reject);
        continue;
      }
      r.region = *parsed_region;

      r.title_cn = opt_string(obj, "title_cn");
      r.title_en = opt_string(obj, "title_en");
      if (!r.title_en) r.title_en = opt_string(obj, "name");
      r.scope_cn = opt_string(obj, "scope_cn");
      r.scope_en = opt_string(obj, "scope_en");
      if (!r.scope_en) r.scope_en = opt_string(obj, "scope");
      r.usage_condition = opt_string(obj, "usage_condition");
      r.limitation = opt_string(obj, "limitation");
      const auto source = opt_string(obj, "source_text");
      if (!source) {
        reject.reason = "missing source_text";
        rejects.push_back(reject);
        continue;
      }
      r.source_text = *source;
      r.status = opt_string(obj, "status").value_or("");
      r.organization = opt_string(obj, "organization")
                           .value_or(opt_string(obj, "org").value_or(""));
      r.technical_field = string_list(obj, "technical_field");
      r.tags = string_list(obj, "tags");
      r.clause = opt_string(obj, "clause");
      r.url = opt_string(obj, "url");
      if (auto d = obj.find("dates"); d != obj.end() && !d->is_null()) {
        if (!d->is_object()) {
          throw std::invalid_argument("field 'dates' must be an object");
        }
        r.dates = StandardDates{opt_string(*d, "published").value_or(""),
                                opt_string(*d, "effective").value_or("")};
      }

      if (!has_text(r.title_cn) && !has_text(r.title_en)) {
        reject.reason = "missing title";
        rejects.push_back(reject);
        continue;
      }
      if (!has_text(r.scope_cn) && !has_text(r.scope_en) &&
          text::trim(r.source_text).empty()) {
        reject.reason = "missing scope";
        rejects.push_back(reject);
        continue;
      }
      auto key = std::pair{r.norm_id, r.region};
      if (auto it = seen.find(key); it != seen.end()) {
        reject.reason = "duplicate norm_id '" + r.norm_id + "' in region " +
                        std::string(to_string(r.region)) + " (first at index " +
                        std::to_string(it->second) + ")";
        rejects.push_back(reject);
        continue;
      }
      seen.emplace(key, i);
      records.push_back(std::move(r));
    } catch (const Error& e) {
      reject.reason = e.what();
      rejects.push_back(reject);
    } catch (const std::invalid_argument& e) {
      reject.reason = e.what();
      rejects.push_back(reject);
    }
  }
  return {Corpus(std::move(records), std::move(source_path)), std::move(rejects)};
}

CorpusLoadResult load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read corpus file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();
  json parsed;
  try {
    parsed = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed corpus JSON in " + path + ": " + e.what(),
                     line_of_offset(content, e.byte));
  }
  return parse_corpus(parsed, path);
}

}  // namespace regjudge
