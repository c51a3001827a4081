#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace regjudge {

struct EmbeddingVector {
  std::vector<float> values;
  std::string model_id;

  std::size_t dimension() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

// Cosine similarity accumulated in double. Throws DimensionError on mismatch.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Returns a unit-length copy; throws ProviderError for an all-zero input.
std::vector<float> l2_normalize(std::span<const float> v);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string model_id() const = 0;
  virtual std::size_t dimension() const = 0;

  // Raw vectors for already standardized texts, one per input, same order.
  // Implementations must be safe to call concurrently.
  virtual std::vector<std::vector<float>> embed(
      std::span<const std::string> texts) = 0;
};

// Offline provider: character n-gram counts hashed (FNV-1a 64) into
// `dimension` buckets. The text is padded with one space on each side before
// n-grams are taken; texts shorter than n yield a single gram.
class HashingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashingEmbeddingProvider(std::size_t dimension = 64,
                                    std::size_t ngram = 3);

  std::string model_id() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<std::vector<float>> embed(
      std::span<const std::string> texts) override;

  std::vector<float> embed_one(std::string_view text) const;

 private:
  std::size_t dimension_;
  std::size_t ngram_;
};

struct HttpEmbeddingOptions {
  std::string url;
  std::string api_key;
  std::string model;
  std::size_t dimension = 384;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
};

// OpenAI-compatible embeddings endpoint: POST {model, input[]} and read
// data[].embedding.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEmbeddingOptions options);

  // Reads REGJUDGE_EMBED_URL / REGJUDGE_EMBED_KEY on top of `base`.
  static HttpEmbeddingOptions options_from_env(HttpEmbeddingOptions base);

  std::string model_id() const override { return options_.model; }
  std::size_t dimension() const override { return options_.dimension; }
  std::vector<std::vector<float>> embed(
      std::span<const std::string> texts) override;

 private:
  HttpEmbeddingOptions options_;
};

// Content-addressed vector store keyed by (model_id, SHA-256 of the
// standardized text). With a directory it also persists to disk so that
// repeated evaluation runs never hit the provider twice.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::filesystem::path dir);

  std::optional<std::vector<float>> get(const std::string& model_id,
                                        const std::string& key,
                                        std::size_t dimension);
  void put(const std::string& model_id, const std::string& key,
           const std::vector<float>& unit_vector);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::filesystem::path file_for(const std::string& model_id,
                                 const std::string& key) const;

  std::optional<std::filesystem::path> dir_;
  std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, std::vector<float>> memory_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

// Provider plus cache. All vectors it returns are unit length and tagged with
// the provider's model id.
class Encoder {
 public:
  explicit Encoder(std::shared_ptr<EmbeddingProvider> provider,
                   std::shared_ptr<EmbeddingCache> cache = nullptr,
                   std::size_t max_in_flight = 8, std::size_t chunk_size = 64);

  const std::string& model_id() const { return model_id_; }
  std::size_t dimension() const { return dimension_; }
  EmbeddingProvider& provider() { return *provider_; }
  EmbeddingCache& cache() { return *cache_; }

  // Throws Error{InvalidInput} when nothing is left after standardization.
  EmbeddingVector embed_text(std::string_view text);
  // Order preserving; equal to calling embed_text on each element.
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);

 private:
  std::shared_ptr<EmbeddingProvider> provider_;
  std::shared_ptr<EmbeddingCache> cache_;
  std::string model_id_;
  std::size_t dimension_;
  std::size_t max_in_flight_;
  std::size_t chunk_size_;
};

}  // namespace regjudge
