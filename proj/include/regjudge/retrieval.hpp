#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/corpus.hpp"
#include "regjudge/embedding.hpp"

namespace regjudge {

// Exact inner-product index over unit vectors, stored row-major.
class VectorIndex {
 public:
  struct Entry {
    std::string norm_id;
    Region region;
  };

  VectorIndex(std::string model_id, std::size_t dimension, std::string built_from,
              LanguagePreference language = LanguagePreference::EnFirst);

  void add(Entry entry, std::span<const float> unit_vector);

  const std::string& model_id() const { return model_id_; }
  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::string& built_from() const { return built_from_; }
  LanguagePreference language() const { return language_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::span<const float> row(std::size_t i) const;

  // Entries (and vectors) for one region, in the same relative order.
  VectorIndex filter(Region region) const;

  // SHA-256 over the binary vector file contents.
  std::string content_hash() const;

  // Writes `<path>` (vectors) and `<path>.meta.json` (sidecar).
  void save(const std::filesystem::path& path) const;
  // Verifies the sidecar hash; throws IntegrityError on mismatch.
  static VectorIndex load(const std::filesystem::path& path);

 private:
  std::string serialize_vectors() const;

  std::string model_id_;
  std::size_t dimension_;
  std::string built_from_;
  LanguagePreference language_;
  std::vector<Entry> entries_;
  std::vector<float> data_;
};

struct RetrievalCandidate {
  std::string norm_id;
  Region region = Region::CN;
  double dense_score = 0.0;
  double keyword_score = 0.0;
  std::optional<double> rerank_score;
  double final_score = 0.0;
  int rank = 0;

  bool operator==(const RetrievalCandidate&) const = default;
};

nlohmann::json to_json(const RetrievalCandidate& c);
RetrievalCandidate candidate_from_json(const nlohmann::json& j);

// Scores this close are tied. Vectors are stored as float, so equal cosines
// can come out a few ulps apart.
inline constexpr double kScoreTieTolerance = 1e-6;

// Descending final_score, then ascending norm_id, then region. Neighbouring
// scores within kScoreTieTolerance (chained) form one tie. Sets rank 1..n.
void sort_and_rank(std::vector<RetrievalCandidate>& candidates);

struct IndexFilter {
  std::optional<std::set<Region>> regions;
  // Keep only records whose status matches one of these (case-insensitive).
  std::optional<std::vector<std::string>> statuses;
  bool exclude_repealed = false;

  bool accepts(const StandardRecord& r) const;
};

// One entry per accepted record, vector = embed(compose_segment_text(r)).
// Throws Error{EmptyIndex} when the filter leaves nothing.
VectorIndex build_index(const Corpus& corpus, Encoder& encoder,
                        const IndexFilter& filter = {},
                        LanguagePreference language = LanguagePreference::EnFirst);

// Exact top-k by inner product. Throws DimensionError when the query does not
// come from the index's model/dimension.
std::vector<RetrievalCandidate> search_top_k(const VectorIndex& index,
                                             const EmbeddingVector& query,
                                             std::size_t k);

// Lowercase term -> expansions. A term never expands to itself.
class SynonymDictionary {
 public:
  SynonymDictionary() = default;

  void add(std::string_view term, const std::vector<std::string>& expansions);
  const std::map<std::string, std::vector<std::string>>& entries() const {
    return entries_;
  }
  bool empty() const { return entries_.empty(); }

  static SynonymDictionary from_json(const nlohmann::json& j);
  static SynonymDictionary load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

// Appends the expansions of every dictionary term present as a whole word.
// Terms are visited in the order they occur in the query; each expansion is
// appended at most once.
std::string expand_query(std::string_view query, const SynonymDictionary& dict);

// Token overlap of the expanded query against a record plus an id bonus when
// some whitespace-delimited span of the query normalizes to the record's id.
class KeywordMatcher {
 public:
  explicit KeywordMatcher(const Corpus& corpus, SynonymDictionary dict = {},
                          double id_bonus = 1.0);

  struct PreparedQuery {
    std::set<std::string> tokens;
    std::set<std::string> id_spans;
  };
  PreparedQuery prepare(std::string_view query) const;

  double score(const PreparedQuery& query, const StandardRecord& record) const;
  double score(std::string_view query, const StandardRecord& record) const;

  const Corpus& corpus() const { return corpus_; }
  double id_bonus() const { return id_bonus_; }

 private:
  const std::set<std::string>& tokens_for(const StandardRecord& record) const;

  const Corpus& corpus_;
  SynonymDictionary dict_;
  double id_bonus_;
  std::map<std::pair<std::string, Region>, std::set<std::string>> record_tokens_;
};

// Normalized ids of every run of 1..5 whitespace-delimited words in the query.
std::set<std::string> query_id_spans(std::string_view query);

double keyword_score(std::string_view query, const StandardRecord& record,
                     const SynonymDictionary& dict = {}, double id_bonus = 1.0);

class PairwiseScorer {
 public:
  virtual ~PairwiseScorer() = default;
  // One relevance score per passage. May throw.
  virtual std::vector<double> score(std::string_view query,
                                    std::span<const std::string> passages) = 0;
};

struct RerankResult {
  std::vector<RetrievalCandidate> candidates;
  bool degraded = false;
  std::string warning;
};

// Scores each candidate's composed text against the query and re-sorts by the
// new score (earlier order breaks ties). Identity when `scorer` is null; on
// scorer failure the input order is kept and the result is marked degraded.
RerankResult rerank(std::string_view query, std::vector<RetrievalCandidate> candidates,
                    PairwiseScorer* scorer, const Corpus& corpus,
                    LanguagePreference language = LanguagePreference::EnFirst);

struct FusionWeights {
  double dense = 0.8;
  double keyword = 0.2;

  void validate() const;
};

// final = w_dense * dense + w_keyword * keyword over every index entry. With
// w_keyword == 0 the keyword channel is skipped and the output equals
// search_top_k.
std::vector<RetrievalCandidate> hybrid_search(const VectorIndex& index,
                                              const KeywordMatcher& matcher,
                                              const EmbeddingVector& query_vector,
                                              std::string_view query, std::size_t k,
                                              const FusionWeights& weights);

}  // namespace regjudge
