#include "regjudge/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "regjudge/errors.hpp"
#include "regjudge/hash.hpp"
#include "regjudge/io.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'J', 'X', 'I'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint64_t uint(int bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += bytes;
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw Error(ErrorCode::IntegrityError, "index file is truncated");
    }
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

bool candidate_before(const RetrievalCandidate& a, const RetrievalCandidate& b) {
  if (a.final_score != b.final_score) return a.final_score > b.final_score;
  if (a.norm_id != b.norm_id) return a.norm_id < b.norm_id;
  return a.region < b.region;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

void check_query(const VectorIndex& index, const EmbeddingVector& query) {
  if (query.dimension() != index.dimension()) {
    throw Error(ErrorCode::DimensionError,
                "query has dimension " + std::to_string(query.dimension()) +
                    " but the index stores " + std::to_string(index.dimension()));
  }
  if (!query.model_id.empty() && query.model_id != index.model_id()) {
    throw Error(ErrorCode::DimensionError, "query vector from model '" +
                                               query.model_id + "' but index built with '" +
                                               index.model_id() + "'");
  }
}

// Strips punctuation that commonly wraps an id in prose: "(YY 0667-2008),".
std::string strip_wrapping(std::string_view s) {
  constexpr std::string_view kWrap = "()[]{}<>,;\"'";
  std::size_t b = 0, e = s.size();
  while (b < e && kWrap.find(s[b]) != std::string_view::npos) ++b;
  while (e > b && (kWrap.find(s[e - 1]) != std::string_view::npos || s[e - 1] == '.')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// ---------------------------------------------------------------------------

VectorIndex::VectorIndex(std::string model_id, std::size_t dimension,
                         std::string built_from, LanguagePreference language)
    : model_id_(std::move(model_id)),
      dimension_(dimension),
      built_from_(std::move(built_from)),
      language_(language) {}

void VectorIndex::add(Entry entry, std::span<const float> unit_vector) {
  if (unit_vector.size() != dimension_) {
    throw Error(ErrorCode::DimensionError, "cannot add vector of dimension " +
                                               std::to_string(unit_vector.size()) +
                                               " to index of dimension " +
                                               std::to_string(dimension_));
  }
  entries_.push_back(std::move(entry));
  data_.insert(data_.end(), unit_vector.begin(), unit_vector.end());
}

std::span<const float> VectorIndex::row(std::size_t i) const {
  return std::span<const float>(data_).subspan(i * dimension_, dimension_);
}

VectorIndex VectorIndex::filter(Region region) const {
  VectorIndex out(model_id_, dimension_, built_from_, language_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].region == region) out.add(entries_[i], row(i));
  }
  return out;
}

std::string VectorIndex::serialize_vectors() const {
  std::string out(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(model_id_.size()));
  out += model_id_;
  put_u32(out, static_cast<std::uint32_t>(dimension_));
  put_u64(out, entries_.size());
  out.reserve(out.size() + data_.size() * 4);
  for (float f : data_) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::string VectorIndex::content_hash() const { return sha256_hex(serialize_vectors()); }

void VectorIndex::save(const std::filesystem::path& path) const {
  const auto bytes = serialize_vectors();
  json meta = {{"format_version", kFormatVersion},
               {"model_id", model_id_},
               {"dimension", dimension_},
               {"count", entries_.size()},
               {"built_from", built_from_},
               {"language_preference", std::string(to_string(language_))},
               {"content_hash", sha256_hex(bytes)}};
  json entries = json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"norm_id", e.norm_id}, {"region", std::string(to_string(e.region))}});
  }
  meta["entries"] = std::move(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, bytes);
  auto meta_path = path;
  meta_path += ".meta.json";
  write_file_atomic(meta_path, meta.dump(2) + "\n");
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  auto meta_path = path;
  meta_path += ".meta.json";
  json meta;
  try {
    meta = json::parse(read_file(meta_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::IntegrityError,
                "index sidecar is not valid JSON: " + std::string(e.what()));
  }
  if (meta.value("content_hash", "") != sha256_hex(bytes)) {
    throw Error(ErrorCode::IntegrityError,
                "index file " + path.string() + " does not match its sidecar hash");
  }

  Reader r(bytes);
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::IntegrityError, "not an index file: " + path.string());
  }
  const auto version = r.uint(4);
  if (version != kFormatVersion) {
    throw Error(ErrorCode::IntegrityError,
                "unsupported index format version " + std::to_string(version));
  }
  const auto model_len = r.uint(4);
  std::string model_id(r.bytes(model_len));
  const auto dimension = r.uint(4);
  const auto count = r.uint(8);

  const auto& entries = meta.at("entries");
  if (entries.size() != count || meta.at("model_id") != model_id ||
      meta.at("dimension").get<std::size_t>() != dimension) {
    throw Error(ErrorCode::IntegrityError, "index header disagrees with sidecar");
  }
  const auto language =
      parse_language_preference(meta.value("language_preference", "EN_FIRST"))
          .value_or(LanguagePreference::EnFirst);
  VectorIndex index(model_id, dimension, meta.value("built_from", ""), language);
  std::vector<float> row(dimension);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < dimension; ++d) {
      row[d] = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    }
    const auto region = parse_region(entries[i].at("region").get<std::string>());
    if (!region) throw Error(ErrorCode::IntegrityError, "bad region in sidecar");
    index.add({entries[i].at("norm_id").get<std::string>(), *region}, row);
  }
  if (!r.done()) throw Error(ErrorCode::IntegrityError, "trailing bytes in index file");
  return index;
}

// ---------------------------------------------------------------------------

json to_json(const RetrievalCandidate& c) {
  json j = {{"norm_id", c.norm_id},
            {"region", std::string(to_string(c.region))},
            {"dense_score", c.dense_score},
            {"keyword_score", c.keyword_score},
            {"final_score", c.final_score},
            {"rank", c.rank}};
  j["rerank_score"] = c.rerank_score ? json(*c.rerank_score) : json(nullptr);
  return j;
}

RetrievalCandidate candidate_from_json(const json& j) {
  RetrievalCandidate c;
  c.norm_id = j.at("norm_id").get<std::string>();
  const auto region = parse_region(j.at("region").get<std::string>());
  if (!region) throw Error(ErrorCode::InvalidInput, "bad candidate region");
  c.region = *region;
  c.dense_score = j.at("dense_score").get<double>();
  c.keyword_score = j.at("keyword_score").get<double>();
  if (j.contains("rerank_score") && !j["rerank_score"].is_null()) {
    c.rerank_score = j["rerank_score"].get<double>();
  }
  c.final_score = j.at("final_score").get<double>();
  c.rank = j.at("rank").get<int>();
  return c;
}

void sort_and_rank(std::vector<RetrievalCandidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(), candidate_before);
  // Chains of neighbours within the tolerance count as one tie.
  for (std::size_t start = 0; start < candidates.size();) {
    std::size_t end = start + 1;
    while (end < candidates.size() &&
           candidates[end - 1].final_score - candidates[end].final_score <= kScoreTieTolerance) {
      ++end;
    }
    if (end - start > 1) {
      std::sort(candidates.begin() + static_cast<std::ptrdiff_t>(start),
                candidates.begin() + static_cast<std::ptrdiff_t>(end),
                [](const RetrievalCandidate& a, const RetrievalCandidate& b) {
                  if (a.norm_id != b.norm_id) return a.norm_id < b.norm_id;
                  return a.region < b.region;
                });
    }
    start = end;
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].rank = static_cast<int>(i + 1);
  }
}

bool IndexFilter::accepts(const StandardRecord& r) const {
  if (regions && !regions->count(r.region)) return false;
  if (exclude_repealed && r.repealed()) return false;
  if (statuses) {
    const auto status = text::to_lower_ascii(text::trim(r.status));
    return std::any_of(statuses->begin(), statuses->end(), [&](const std::string& s) {
      return text::to_lower_ascii(text::trim(s)) == status;
    });
  }
  return true;
}

VectorIndex build_index(const Corpus& corpus, Encoder& encoder,
                        const IndexFilter& filter, LanguagePreference language) {
  std::vector<const StandardRecord*> selected;
  std::vector<std::string> texts;
  for (const auto& r : corpus.records()) {
    if (!filter.accepts(r)) continue;
    selected.push_back(&r);
    texts.push_back(compose_segment_text(r, language));
  }
  if (selected.empty()) {
    throw Error(ErrorCode::EmptyIndex, "no corpus records left to index");
  }
  const auto vectors = encoder.embed_batch(texts);
  VectorIndex index(encoder.model_id(), encoder.dimension(), corpus.content_hash(),
                    language);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    index.add({selected[i]->norm_id, selected[i]->region}, vectors[i].values);
  }
  return index;
}

std::vector<RetrievalCandidate> search_top_k(const VectorIndex& index,
                                             const EmbeddingVector& query,
                                             std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidInput, "k must be at least 1");
  check_query(index, query);
  std::vector<RetrievalCandidate> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    RetrievalCandidate c;
    c.norm_id = index.entries()[i].norm_id;
    c.region = index.entries()[i].region;
    c.dense_score = std::clamp(dot(index.row(i), query.values), -1.0, 1.0);
    c.final_score = c.dense_score;
    all.push_back(std::move(c));
  }
  sort_and_rank(all);
  if (all.size() > k) all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------

void SynonymDictionary::add(std::string_view term,
                            const std::vector<std::string>& expansions) {
  const auto key = text::to_lower_ascii(text::trim(term));
  if (key.empty()) return;
  auto& list = entries_[key];
  for (const auto& e : expansions) {
    const auto value = text::to_lower_ascii(text::trim(e));
    if (value.empty() || value == key) continue;
    if (std::find(list.begin(), list.end(), value) == list.end()) list.push_back(value);
  }
}

SynonymDictionary SynonymDictionary::from_json(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigError, "synonym dictionary must be a JSON object");
  }
  SynonymDictionary dict;
  for (const auto& [term, expansions] : j.items()) {
    if (!expansions.is_array()) {
      throw Error(ErrorCode::ConfigError, "expansions for '" + term + "' must be a list");
    }
    dict.add(term, expansions.get<std::vector<std::string>>());
  }
  return dict;
}

SynonymDictionary SynonymDictionary::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError,
                "cannot parse synonym file " + path.string() + ": " + e.what());
  }
}

std::string expand_query(std::string_view query, const SynonymDictionary& dict) {
  const auto query_tokens = text::tokenize(query);
  // (position of first occurrence, term)
  std::vector<std::pair<std::size_t, const std::string*>> hits;
  for (const auto& [term, expansions] : dict.entries()) {
    const auto term_tokens = text::tokenize(term);
    if (term_tokens.empty()) continue;
    auto it = std::search(query_tokens.begin(), query_tokens.end(), term_tokens.begin(),
                          term_tokens.end());
    if (it != query_tokens.end()) {
      hits.emplace_back(static_cast<std::size_t>(it - query_tokens.begin()), &term);
    }
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::string out(query);
  std::vector<std::string> appended;
  for (const auto& [pos, term] : hits) {
    for (const auto& e : dict.entries().at(*term)) {
      if (std::find(appended.begin(), appended.end(), e) != appended.end()) continue;
      appended.push_back(e);
      out.push_back(' ');
      out += e;
    }
  }
  return out;
}

std::set<std::string> query_id_spans(std::string_view query) {
  const auto words = text::split_whitespace(query);
  std::set<std::string> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string span;
    for (std::size_t len = 1; len <= 5 && i + len <= words.size(); ++len) {
      if (len > 1) span.push_back(' ');
      span += words[i + len - 1];
      const auto cleaned = strip_wrapping(span);
      if (cleaned.empty()) continue;
      try {
        out.insert(normalize_standard_id(cleaned));
      } catch (const Error&) {
      }
    }
  }
  return out;
}

KeywordMatcher::KeywordMatcher(const Corpus& corpus, SynonymDictionary dict,
                               double id_bonus)
    : corpus_(corpus), dict_(std::move(dict)), id_bonus_(id_bonus) {
  for (const auto& r : corpus_.records()) {
    auto tokens = text::tokenize(record_search_text(r));
    record_tokens_.emplace(std::pair{r.norm_id, r.region},
                           std::set<std::string>(tokens.begin(), tokens.end()));
  }
}

KeywordMatcher::PreparedQuery KeywordMatcher::prepare(std::string_view query) const {
  PreparedQuery q;
  const auto tokens = text::tokenize(expand_query(query, dict_));
  q.tokens.insert(tokens.begin(), tokens.end());
  q.id_spans = query_id_spans(query);
  return q;
}

double KeywordMatcher::score(const PreparedQuery& query,
                             const StandardRecord& record) const {
  double s = 0.0;
  if (!query.tokens.empty()) {
    std::set<std::string> fallback;
    const std::set<std::string>* tokens = nullptr;
    if (auto it = record_tokens_.find({record.norm_id, record.region});
        it != record_tokens_.end()) {
      tokens = &it->second;
    } else {
      auto t = text::tokenize(record_search_text(record));
      fallback.insert(t.begin(), t.end());
      tokens = &fallback;
    }
    std::size_t overlap = 0;
    for (const auto& t : query.tokens) overlap += tokens->count(t);
    s = static_cast<double>(overlap) / static_cast<double>(query.tokens.size());
  }
  if (query.id_spans.count(record.norm_id)) s += id_bonus_;
  return s;
}

double KeywordMatcher::score(std::string_view query, const StandardRecord& record) const {
  return score(prepare(query), record);
}

double keyword_score(std::string_view query, const StandardRecord& record,
                     const SynonymDictionary& dict, double id_bonus) {
  static const Corpus kEmpty;
  KeywordMatcher matcher(kEmpty, dict, id_bonus);
  return matcher.score(query, record);
}

// ---------------------------------------------------------------------------

RerankResult rerank(std::string_view query, std::vector<RetrievalCandidate> candidates,
                    PairwiseScorer* scorer, const Corpus& corpus,
                    LanguagePreference language) {
  RerankResult result;
  if (!scorer || candidates.empty()) {
    result.candidates = std::move(candidates);
    return result;
  }
  std::vector<std::string> passages;
  passages.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto* record = corpus.find(c.norm_id, c.region);
    passages.push_back(record ? compose_segment_text(*record, language) : c.norm_id);
  }
  std::vector<double> scores;
  try {
    scores = scorer->score(query, passages);
    if (scores.size() != candidates.size()) {
      throw std::runtime_error("scorer returned " + std::to_string(scores.size()) +
                               " scores for " + std::to_string(candidates.size()) +
                               " candidates");
    }
  } catch (const std::exception& e) {
    result.candidates = std::move(candidates);
    result.degraded = true;
    result.warning = std::string("rerank skipped: ") + e.what();
    return result;
  }

  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (candidates[a].final_score != candidates[b].final_score) {
      return candidates[a].final_score > candidates[b].final_score;
    }
    return candidates[a].norm_id < candidates[b].norm_id;
  });
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto c = candidates[order[i]];
    c.rerank_score = scores[order[i]];
    c.final_score = scores[order[i]];
    c.rank = static_cast<int>(i + 1);
    result.candidates.push_back(std::move(c));
  }
  return result;
}

void FusionWeights::validate() const {
  if (dense < 0.0 || keyword < 0.0 || !(dense + keyword > 0.0)) {
    throw Error(ErrorCode::InvalidInput,
                "fusion weights must be non-negative with a positive sum");
  }
}

std::vector<RetrievalCandidate> hybrid_search(const VectorIndex& index,
                                              const KeywordMatcher& matcher,
                                              const EmbeddingVector& query_vector,
                                              std::string_view query, std::size_t k,
                                              const FusionWeights& weights) {
  weights.validate();
  if (k < 1) throw Error(ErrorCode::InvalidInput, "k must be at least 1");
  check_query(index, query_vector);

  const bool use_keywords = weights.keyword > 0.0;
  KeywordMatcher::PreparedQuery prepared;
  if (use_keywords) prepared = matcher.prepare(query);

  std::vector<RetrievalCandidate> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& entry = index.entries()[i];
    RetrievalCandidate c;
    c.norm_id = entry.norm_id;
    c.region = entry.region;
    c.dense_score = std::clamp(dot(index.row(i), query_vector.values), -1.0, 1.0);
    if (use_keywords) {
      const auto* record = matcher.corpus().find(entry.norm_id, entry.region);
      if (!record) {
        throw Error(ErrorCode::InvalidInput,
                    "index entry " + entry.norm_id + " is missing from the corpus");
      }
      c.keyword_score = matcher.score(prepared, *record);
    }
    c.final_score = weights.dense * c.dense_score + weights.keyword * c.keyword_score;
    all.push_back(std::move(c));
  }
  sort_and_rank(all);
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace regjudge
