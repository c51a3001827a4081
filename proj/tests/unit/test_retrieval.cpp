#include <algorithm>
#include <cmath>
#include <mutex>

#include <gtest/gtest.h>

#include "regjudge/embedding.hpp"
#include "regjudge/errors.hpp"
#include "regjudge/retrieval.hpp"
#include "regjudge/text.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace regjudge;
using regjudge::testing::TextGen;
using namespace regjudge::testing;

namespace {

// Counts provider calls and the texts it was asked for.
class CountingProvider final : public EmbeddingProvider {
 public:
  explicit CountingProvider(std::size_t dim = 16) : inner_(dim) {}
  std::string model_id() const override { return inner_.model_id(); }
  std::size_t dimension() const override { return inner_.dimension(); }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
    std::lock_guard lock(mutex_);
    ++calls;
    items += texts.size();
    return inner_.embed(texts);
  }
  std::size_t calls = 0;
  std::size_t items = 0;

 private:
  HashingEmbeddingProvider inner_;
  std::mutex mutex_;
};

class FailingProvider final : public EmbeddingProvider {
 public:
  std::string model_id() const override { return "failing"; }
  std::size_t dimension() const override { return 4; }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (texts[i].find("boom") != std::string::npos) throw ProviderError("boom", true, i);
    }
    return std::vector<std::vector<float>>(texts.size(), std::vector<float>{1, 0, 0, 0});
  }
};

Encoder hashing_encoder(std::size_t d = 64) {
  return Encoder(std::make_shared<HashingEmbeddingProvider>(d));
}

Corpus random_corpus(TextGen& gen, std::size_t n) {
  std::vector<StandardRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const Region region = gen.uniform(0, 1) ? Region::CN : Region::US;
    records.push_back(regjudge::testing::make_record("STD " + std::to_string(1000 + i), region,
                                                     gen.words(2, 10)));
  }
  return Corpus(std::move(records), "random");
}

void sort_oracle(std::vector<Scored>& v) { rank_oracle(v, 0.0); }

// Positions may swap only where the oracle itself has a near tie.
void expect_same_ranking(const std::vector<RetrievalCandidate>& got, const std::vector<Scored>& oracle,
                         std::size_t k, double tol, double (*score_of)(const RetrievalCandidate&)) {
  ASSERT_EQ(got.size(), std::min(k, oracle.size()));
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(score_of(got[i]), oracle[i].score, tol) << "rank " << i + 1;
    const bool near_tie = (i > 0 && std::abs(oracle[i].score - oracle[i - 1].score) < tol) ||
                          (i + 1 < oracle.size() && std::abs(oracle[i].score - oracle[i + 1].score) < tol);
    if (!near_tie) {
      EXPECT_EQ(got[i].norm_id, oracle[i].norm_id) << "rank " << i + 1;
    }
    EXPECT_EQ(got[i].rank, static_cast<int>(i + 1));
  }
}

double dense_of(const RetrievalCandidate& c) { return c.dense_score; }
double final_of(const RetrievalCandidate& c) { return c.final_score; }

}  // namespace

TEST(HashingProvider, MatchesReferenceImplementation) {
  HashingEmbeddingProvider p(64);
  EXPECT_EQ(p.model_id(), "hash-char3-d64");
  for (const std::string t : {"abc", "glucose meter", "真空采血管", "a", "yy 0667-2008"}) {
    const auto got = p.embed_one(t);
    const auto want = reference_hash_vector(t, 64);
    ASSERT_EQ(got.size(), 64u);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(static_cast<double>(got[i]), want[i]) << t << " @" << i;
  }
}

TEST(HashingProvider, FrozenBuckets) {
  // " ab", "abc", "bc " under FNV-1a 64 mod 64.
  const auto v = HashingEmbeddingProvider(64).embed_one("abc");
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0f) nonzero.push_back(i);
  }
  EXPECT_EQ(nonzero, (std::vector<std::size_t>{8, 11, 22}));
}

TEST(Encoder, FrozenCosines) {
  auto enc = hashing_encoder();
  auto sim = [&](const char* a, const char* b) { return cosine(enc.embed_text(a), enc.embed_text(b)); };
  EXPECT_NEAR(sim("glucose meter", "glucose monitor"), 0.751469149302, 1e-6);
  EXPECT_NEAR(sim("glucose meter", "elbow prosthesis"), 0.243432247780, 1e-6);
  EXPECT_NEAR(sim("sterile tube sealed", "sterile tube sealed under vacuum"), 0.796186563236, 1e-6);
}

TEST(Encoder, UnitNormAndDeterminism) {
  auto enc = hashing_encoder();
  TextGen gen(3);
  for (int i = 0; i < 100; ++i) {
    const auto t = gen.words(1, 12);
    const auto v = enc.embed_text(t);
    double norm = 0;
    for (float x : v.values) norm += static_cast<double>(x) * x;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
    EXPECT_EQ(v, enc.embed_text(t));
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-6);
  }
}

TEST(Encoder, PunctuationIsStandardizedAway) {
  auto enc = hashing_encoder();
  EXPECT_EQ(enc.embed_text("glucose meter"), enc.embed_text("glucose meter."));
  EXPECT_EQ(enc.embed_text("Glucose  Meter"), enc.embed_text("glucose meter"));
}

TEST(Encoder, EmptyTextIsInvalidInput) {
  auto enc = hashing_encoder();
  try {
    enc.embed_text(" ... ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
}

TEST(Encoder, BatchEqualsMappedSingles) {
  TextGen gen(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto batch_enc = hashing_encoder(32);
    auto single_enc = hashing_encoder(32);
    std::vector<std::string> texts;
    const auto n = gen.uniform(0, 150);
    for (std::size_t i = 0; i < n; ++i) texts.push_back(gen.words(1, 6));
    const auto batch = batch_enc.embed_batch(texts);
    ASSERT_EQ(batch.size(), texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(batch[i], single_enc.embed_text(texts[i]));
  }
}

TEST(Encoder, DuplicateBatchCallsProviderOnce) {
  auto provider = std::make_shared<CountingProvider>();
  Encoder enc(provider, std::make_shared<EmbeddingCache>());
  std::vector<std::string> texts(100, "same text every time");
  const auto out = enc.embed_batch(texts);
  EXPECT_EQ(out.size(), 100u);
  EXPECT_EQ(provider->calls, 1u);
  EXPECT_EQ(provider->items, 1u);
  enc.embed_text("same text every time");
  EXPECT_EQ(provider->calls, 1u);
  EXPECT_GE(enc.cache().hits(), 1u);
}

TEST(Encoder, DiskCacheSurvivesNewEncoder) {
  regjudge::testing::TempDir dir;
  auto p1 = std::make_shared<CountingProvider>();
  Encoder(p1, std::make_shared<EmbeddingCache>(dir.path())).embed_text("persist me");
  auto p2 = std::make_shared<CountingProvider>();
  Encoder e2(p2, std::make_shared<EmbeddingCache>(dir.path()));
  const auto v = e2.embed_text("persist me");
  EXPECT_EQ(p2->calls, 0u);
  EXPECT_EQ(v, Encoder(std::make_shared<CountingProvider>()).embed_text("persist me"));
}

TEST(Encoder, ProviderErrorCarriesBatchIndex) {
  Encoder enc(std::make_shared<FailingProvider>());
  std::vector<std::string> texts = {"fine", "also fine", "boom here", "fine again"};
  try {
    enc.embed_batch(texts);
    FAIL();
  } catch (const ProviderError& e) {
    ASSERT_TRUE(e.item_index().has_value());
    EXPECT_EQ(*e.item_index(), 2u);
    EXPECT_TRUE(e.retryable());
  }
}

TEST(Encoder, MoreSharedGramsMeansHigherSimilarity) {
  auto enc = hashing_encoder();
  const std::vector<std::array<const char*, 3>> triples = {
      {"blood collection tube", "blood collection tubes", "elbow joint implant"},
      {"pulse oximeter", "pulse oximeters", "surgical gown"},
      {"oxygen concentrator", "oxygen concentrators for home", "syringe plunger"},
  };
  for (const auto& [a, near, far] : triples) {
    const auto va = enc.embed_text(a);
    EXPECT_GT(cosine(va, enc.embed_text(near)), cosine(va, enc.embed_text(far))) << a;
  }
}

TEST(Cosine, DimensionMismatchThrows) {
  std::vector<float> a{1, 0}, b{1, 0, 0};
  try {
    cosine(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionError);
  }
}

TEST(Index, BuildSizesAndDeterministicHash) {
  std::vector<StandardRecord> rs = {
      regjudge::testing::make_record("A 1", Region::CN, "alpha beta"),
      regjudge::testing::make_record("B 2", Region::CN, "gamma delta"),
      regjudge::testing::make_record("C 3", Region::US, "epsilon"),
  };
  Corpus corpus(rs, "t");
  auto enc = hashing_encoder(32);
  const auto idx = build_index(corpus, enc);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx.dimension(), 32u);
  EXPECT_EQ(idx.built_from(), corpus.content_hash());
  auto enc2 = hashing_encoder(32);
  EXPECT_EQ(build_index(corpus, enc2).content_hash(), idx.content_hash());
  EXPECT_EQ(search_top_k(idx, enc.embed_text("alpha"), 5).size(), 3u);
}

TEST(Index, StatusAndRegionFilters) {
  std::vector<StandardRecord> rs = {
      regjudge::testing::make_record("A 1", Region::CN, "alpha", "Current"),
      regjudge::testing::make_record("B 2", Region::CN, "beta", "Repealed"),
      regjudge::testing::make_record("C 3", Region::US, "gamma", "Current"),
      regjudge::testing::make_record("D 4", Region::US, "delta", "Partial"),
  };
  Corpus corpus(rs, "t");
  auto enc = hashing_encoder(16);
  IndexFilter current;
  current.statuses = std::vector<std::string>{"current"};
  EXPECT_EQ(build_index(corpus, enc, current).size(), 2u);
  IndexFilter no_repealed;
  no_repealed.exclude_repealed = true;
  EXPECT_EQ(build_index(corpus, enc, no_repealed).size(), 3u);
  IndexFilter us;
  us.regions = std::set<Region>{Region::US};
  const auto us_idx = build_index(corpus, enc, us);
  EXPECT_EQ(us_idx.size(), 2u);
  for (const auto& e : us_idx.entries()) EXPECT_EQ(e.region, Region::US);
  IndexFilter none;
  none.statuses = std::vector<std::string>{"draft"};
  try {
    build_index(corpus, enc, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIndex);
  }
}

TEST(Index, SaveLoadRoundTripAndTamperDetection) {
  regjudge::testing::TempDir dir;
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  const auto path = dir / "mini.rjx";
  idx.save(path);
  const auto loaded = VectorIndex::load(path);
  EXPECT_EQ(loaded.content_hash(), idx.content_hash());
  EXPECT_EQ(loaded.model_id(), "hash-char3-d64");
  ASSERT_EQ(loaded.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(loaded.entries()[i].norm_id, idx.entries()[i].norm_id);
    const auto a = loaded.row(i), b = idx.row(i);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  auto bytes = read_file(path);
  bytes[bytes.size() - 2] ^= 0x55;
  write_file_atomic(path, bytes);
  try {
    VectorIndex::load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IntegrityError);
  }
}

TEST(Search, QueryFromOtherModelIsDimensionError) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder(64);
  const auto idx = build_index(corpus, enc);
  auto other = hashing_encoder(32);
  try {
    search_top_k(idx, other.embed_text("tube"), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionError);
  }
}

TEST(Search, SelfQueryRanksFirst) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  for (const auto& r : corpus.records()) {
    const auto hits = search_top_k(idx, enc.embed_text(compose_segment_text(r, LanguagePreference::EnFirst)), 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].norm_id, r.norm_id);
    EXPECT_EQ(hits[0].region, r.region) << r.id;
    EXPECT_NEAR(hits[0].dense_score, 1.0, 1e-6) << r.id;
  }
}

TEST(Search, ExactAgainstBruteForceOracle) {
  TextGen gen(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = gen.uniform(4, 32);
    const auto corpus = random_corpus(gen, gen.uniform(1, 50));
    auto enc = hashing_encoder(d);
    const auto idx = build_index(corpus, enc);
    const auto query = gen.words(1, 8);
    const std::size_t k = gen.uniform(1, 60);
    const auto got = search_top_k(idx, enc.embed_text(query), k);

    HashingEmbeddingProvider raw(d);
    const auto q = reference_hash_vector(text::standardize(query), d);
    std::vector<Scored> oracle;
    for (const auto& r : corpus.records()) {
      const auto v = reference_hash_vector(text::standardize(compose_segment_text(r, LanguagePreference::EnFirst)), d);
      oracle.push_back({r.norm_id, r.region, reference_cosine(q, v)});
    }
    sort_oracle(oracle);
    expect_same_ranking(got, oracle, k, 1e-6, dense_of);
  }
}

TEST(Search, L2AndInnerProductRankingsCoincide) {
  TextGen gen(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto corpus = random_corpus(gen, 30);
    auto enc = hashing_encoder(24);
    const auto idx = build_index(corpus, enc);
    const auto q = enc.embed_text(gen.words(2, 6));
    const auto ip = search_top_k(idx, q, idx.size());
    std::vector<Scored> l2;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double dist = 0;
      const auto row = idx.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) dist += std::pow(row[j] - q.values[j], 2);
      l2.push_back({idx.entries()[i].norm_id, idx.entries()[i].region, -dist});
    }
    sort_oracle(l2);
    for (std::size_t i = 0; i < ip.size(); ++i) {
      const bool near_tie = (i > 0 && std::abs(l2[i].score - l2[i - 1].score) < 1e-6) ||
                            (i + 1 < l2.size() && std::abs(l2[i].score - l2[i + 1].score) < 1e-6);
      if (!near_tie) {
        EXPECT_EQ(ip[i].norm_id, l2[i].norm_id);
      }
    }
  }
}

TEST(Search, UnrelatedRecordKeepsRelativeOrder) {
  TextGen gen(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto corpus = random_corpus(gen, 20);
    auto enc = hashing_encoder(32);
    const auto query = enc.embed_text(gen.words(2, 5));
    const auto before = search_top_k(build_index(corpus, enc), query, 20);
    auto records = corpus.records();
    records.push_back(regjudge::testing::make_record("ZZZ 9", Region::US, "xylophone quartz"));
    const auto after = search_top_k(build_index(Corpus(records, "t"), enc), query, 21);
    std::vector<std::string> filtered;
    for (const auto& c : after) {
      if (c.norm_id != "zzz9") filtered.push_back(c.norm_id);
    }
    std::vector<std::string> original;
    for (const auto& c : before) original.push_back(c.norm_id);
    EXPECT_EQ(filtered, original);
  }
}

TEST(Synonyms, AbbreviationExpansion) {
  SynonymDictionary dict;
  dict.add("glucose", {"sugar", "cgm", "blood sugar"});
  EXPECT_EQ(expand_query("glucose monitor", dict), "glucose monitor sugar cgm blood sugar");
  EXPECT_EQ(expand_query("elbow implant", dict), "elbow implant");
  EXPECT_EQ(expand_query("GLUCOSE!", dict), "GLUCOSE! sugar cgm blood sugar");
}

TEST(Synonyms, OverlappingExpansionsAppendedOnce) {
  SynonymDictionary dict;
  dict.add("glucose", {"sugar", "cgm"});
  dict.add("diabetes", {"sugar", "insulin"});
  EXPECT_EQ(expand_query("diabetes glucose meter", dict), "diabetes glucose meter sugar insulin cgm");
}

TEST(Synonyms, NeverExpandsToItself) {
  SynonymDictionary dict;
  dict.add("Tube", {"tube", "Container"});
  ASSERT_EQ(dict.entries().size(), 1u);
  EXPECT_EQ(dict.entries().at("tube"), std::vector<std::string>{"container"});
  EXPECT_THROW(SynonymDictionary::from_json(nlohmann::json::array()), Error);
}

TEST(KeywordScore, Examples) {
  const auto corpus = regjudge::testing::mini_corpus();
  const auto* bp = corpus.find("yy0667", Region::CN);
  ASSERT_NE(bp, nullptr);
  const double with_id = keyword_score("YY 0667-2008 blood pressure monitor", *bp);
  const double without = keyword_score("blood pressure monitor", *bp);
  EXPECT_GT(with_id, 1.0);
  EXPECT_NEAR(with_id - without, 1.0, 1e-12);
  EXPECT_EQ(keyword_score("zebra quartz", *bp), 0.0);

  const auto r = regjudge::testing::make_record("Q 1", Region::CN, "alpha beta gamma");
  EXPECT_DOUBLE_EQ(keyword_score("Gamma alpha BETA", r), 1.0);
  EXPECT_DOUBLE_EQ(keyword_score("alpha zeta", r), 0.5);
}

TEST(KeywordScore, MatchesSetOverlapOracle) {
  TextGen gen(31);
  for (int i = 0; i < 300; ++i) {
    const auto r = regjudge::testing::make_record("R 1", Region::US, gen.words(1, 10));
    const auto q = gen.words(1, 8);
    const auto qt = text::tokenize(q);
    const std::set<std::string> qs(qt.begin(), qt.end());
    const auto rt = text::tokenize(record_search_text(r));
    const std::set<std::string> rs(rt.begin(), rt.end());
    std::size_t overlap = 0;
    for (const auto& t : qs) overlap += rs.count(t);
    EXPECT_DOUBLE_EQ(keyword_score(q, r), static_cast<double>(overlap) / qs.size());
  }
}

namespace {

class ListScorer final : public PairwiseScorer {
 public:
  explicit ListScorer(std::function<std::vector<double>(std::size_t)> f) : f_(std::move(f)) {}
  std::vector<double> score(std::string_view, std::span<const std::string> passages) override {
    return f_(passages.size());
  }

 private:
  std::function<std::vector<double>(std::size_t)> f_;
};

std::vector<RetrievalCandidate> dense_candidates(const Corpus& corpus, std::size_t k) {
  auto enc = hashing_encoder();
  return search_top_k(build_index(corpus, enc), enc.embed_text("blood collection tube"), k);
}

std::vector<std::string> ids(const std::vector<RetrievalCandidate>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.norm_id);
  return out;
}

}  // namespace

TEST(Rerank, IdentityWithoutScorer) {
  const auto corpus = regjudge::testing::mini_corpus();
  const auto cands = dense_candidates(corpus, 6);
  const auto out = rerank("q", cands, nullptr, corpus);
  EXPECT_EQ(out.candidates, cands);
  EXPECT_FALSE(out.degraded);
}

TEST(Rerank, ReversingScorerReversesOrder) {
  const auto corpus = regjudge::testing::mini_corpus();
  const auto cands = dense_candidates(corpus, 6);
  ListScorer reverse([](std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(i);
    return s;
  });
  auto out = rerank("q", cands, &reverse, corpus);
  auto expected = ids(cands);
  std::reverse(expected.begin(), expected.end());
  EXPECT_EQ(ids(out.candidates), expected);
  EXPECT_EQ(out.candidates.front().rank, 1);
  ASSERT_TRUE(out.candidates.front().rerank_score.has_value());
}

TEST(Rerank, EqualScoresKeepDenseOrder) {
  const auto corpus = regjudge::testing::mini_corpus();
  const auto cands = dense_candidates(corpus, 6);
  ListScorer flat([](std::size_t n) { return std::vector<double>(n, 0.5); });
  EXPECT_EQ(ids(rerank("q", cands, &flat, corpus).candidates), ids(cands));
}

TEST(Rerank, ScorerFailureDegradesToDenseOrder) {
  const auto corpus = regjudge::testing::mini_corpus();
  const auto cands = dense_candidates(corpus, 6);
  ListScorer broken([](std::size_t) -> std::vector<double> { throw ProviderError("down", true); });
  const auto out = rerank("q", cands, &broken, corpus);
  EXPECT_TRUE(out.degraded);
  EXPECT_FALSE(out.warning.empty());
  EXPECT_EQ(ids(out.candidates), ids(cands));
  ListScorer short_list([](std::size_t n) { return std::vector<double>(n - 1, 1.0); });
  EXPECT_TRUE(rerank("q", cands, &short_list, corpus).degraded);
}

TEST(Hybrid, DenseOnlyWeightsEqualSearchTopK) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  KeywordMatcher matcher(corpus);
  const std::string q = "electronic blood pressure monitor";
  const auto qv = enc.embed_text(q);
  EXPECT_EQ(hybrid_search(idx, matcher, qv, q, 7, {1.0, 0.0}), search_top_k(idx, qv, 7));
}

TEST(Hybrid, KeywordOnlyIdQueryRanksNamedStandardFirst) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  KeywordMatcher matcher(corpus);
  const std::string q = "requirements similar to YY/T 0314-2021 for tubes";
  const auto out = hybrid_search(idx, matcher, enc.embed_text(q), q, 3, {0.0, 1.0});
  ASSERT_FALSE(out.empty());
  EXPECT_EQ(out[0].norm_id, "yyt0314");
}

TEST(Hybrid, InvalidWeightsRejected) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  KeywordMatcher matcher(corpus);
  const auto qv = enc.embed_text("tube");
  EXPECT_THROW(hybrid_search(idx, matcher, qv, "tube", 3, {0.0, 0.0}), Error);
  EXPECT_THROW(hybrid_search(idx, matcher, qv, "tube", 3, {-0.1, 1.0}), Error);
  EXPECT_THROW(hybrid_search(idx, matcher, qv, "tube", 0, {1.0, 0.0}), Error);
}

TEST(Hybrid, MatchesFusedScoreOracle) {
  TextGen gen(4242);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = gen.uniform(4, 32);
    const auto corpus = random_corpus(gen, gen.uniform(1, 40));
    auto enc = hashing_encoder(d);
    const auto idx = build_index(corpus, enc);
    SynonymDictionary dict;
    dict.add("blood", {"plasma"});
    KeywordMatcher matcher(corpus, dict);
    const double wd = gen.real(0.0, 1.0), wk = gen.real(0.01, 1.0);
    std::string query = gen.words(1, 6);
    if (gen.uniform(0, 3) == 0) query += " STD " + std::to_string(1000 + gen.uniform(0, 40));
    const std::size_t k = gen.uniform(1, 10);
    const auto got = hybrid_search(idx, matcher, enc.embed_text(query), query, k, {wd, wk});

    const auto expanded = expand_query(query, dict);
    const auto qt = text::tokenize(expanded);
    const std::set<std::string> qs(qt.begin(), qt.end());
    const auto spans = query_id_spans(query);
    const auto qv = reference_hash_vector(text::standardize(query), d);
    std::vector<Scored> oracle;
    for (const auto& r : corpus.records()) {
      const auto rv = reference_hash_vector(text::standardize(compose_segment_text(r, LanguagePreference::EnFirst)), d);
      const auto rt = text::tokenize(record_search_text(r));
      const std::set<std::string> rs(rt.begin(), rt.end());
      std::size_t overlap = 0;
      for (const auto& t : qs) overlap += rs.count(t);
      double kw = qs.empty() ? 0.0 : static_cast<double>(overlap) / qs.size();
      if (spans.count(r.norm_id)) kw += 1.0;
      oracle.push_back({r.norm_id, r.region, wd * reference_cosine(qv, rv) + wk * kw});
    }
    sort_oracle(oracle);
    expect_same_ranking(got, oracle, k, 1e-6, final_of);
  }
}

TEST(Hybrid, DeterministicSerializedOutput) {
  const auto corpus = regjudge::testing::mini_corpus();
  auto enc = hashing_encoder();
  const auto idx = build_index(corpus, enc);
  KeywordMatcher matcher(corpus);
  const std::string q = regjudge::testing::kCaseStudy;
  auto dump = [&] {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : hybrid_search(idx, matcher, enc.embed_text(q), q, 10, {})) j.push_back(to_json(c));
    return j.dump();
  };
  EXPECT_EQ(dump(), dump());
}

TEST(Ranking, NearEqualScoresTieBreakByNormId) {
  auto make = [](const std::string& id, Region region, double score) {
    RetrievalCandidate c;
    c.norm_id = id;
    c.region = region;
    c.final_score = score;
    return c;
  };
  std::vector<RetrievalCandidate> v = {make("c", Region::CN, 0.9), make("b", Region::US, 0.5 + 4e-7),
                                       make("a", Region::US, 0.5), make("a", Region::CN, 0.5 - 3e-7),
                                       make("z", Region::CN, 0.4)};
  sort_and_rank(v);
  std::vector<std::string> order;
  for (const auto& c : v) order.push_back(c.norm_id + std::string(to_string(c.region)));
  EXPECT_EQ(order, (std::vector<std::string>{"cCN", "aCN", "aUS", "bUS", "zCN"}));
  EXPECT_EQ(v[4].rank, 5);
}
