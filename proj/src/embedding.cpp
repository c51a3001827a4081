#include "regjudge/embedding.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <future>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/hash.hpp"
#include "regjudge/http_client.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionError,
                "vector dimensions differ: " + std::to_string(a.size()) +
                    " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine(std::span<const float>(a.values), std::span<const float>(b.values));
}

std::vector<float> l2_normalize(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq == 0.0 || !std::isfinite(sq)) {
    throw ProviderError("provider returned a zero or non-finite vector", false);
  }
  const double norm = std::sqrt(sq);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(v[i] / norm);
  }
  return out;
}

// ---------------------------------------------------------------------------

HashingEmbeddingProvider::HashingEmbeddingProvider(std::size_t dimension,
                                                   std::size_t ngram)
    : dimension_(dimension), ngram_(ngram) {
  if (dimension_ == 0 || ngram_ == 0) {
    throw Error(ErrorCode::ConfigError, "hashing provider needs d > 0 and n > 0");
  }
}

std::string HashingEmbeddingProvider::model_id() const {
  return "hash-char" + std::to_string(ngram_) + "-d" + std::to_string(dimension_);
}

std::vector<float> HashingEmbeddingProvider::embed_one(std::string_view text) const {
  std::vector<char32_t> cps{U' '};
  for (char32_t c : text::decode_utf8(text)) cps.push_back(c);
  cps.push_back(U' ');

  std::vector<float> v(dimension_, 0.0f);
  const std::size_t n = std::min(ngram_, cps.size());
  std::string gram;
  for (std::size_t i = 0; i + n <= cps.size(); ++i) {
    gram.clear();
    for (std::size_t k = 0; k < n; ++k) text::append_utf8(gram, cps[i + k]);
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : gram) {
      h ^= c;
      h *= 1099511628211ull;
    }
    v[h % dimension_] += 1.0f;
  }
  return v;
}

std::vector<std::vector<float>> HashingEmbeddingProvider::embed(
    std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

// ---------------------------------------------------------------------------

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEmbeddingOptions options)
    : options_(std::move(options)) {
  if (options_.url.empty()) {
    throw Error(ErrorCode::ConfigError,
                "remote embedding provider needs an endpoint (REGJUDGE_EMBED_URL)");
  }
}

HttpEmbeddingOptions HttpEmbeddingProvider::options_from_env(HttpEmbeddingOptions base) {
  if (const char* url = std::getenv("REGJUDGE_EMBED_URL")) base.url = url;
  if (const char* key = std::getenv("REGJUDGE_EMBED_KEY")) base.api_key = key;
  return base;
}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed(
    std::span<const std::string> texts) {
  nlohmann::json request = {{"model", options_.model},
                            {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  std::vector<HttpHeader> headers;
  if (!options_.api_key.empty()) {
    headers.push_back({"Authorization", "Bearer " + options_.api_key});
  }
  const std::string body = request.dump();

  for (int attempt = 0;; ++attempt) {
    const bool last = attempt >= options_.max_retries;
    try {
      auto res = http_post_json(options_.url, body, headers, options_.timeout);
      if (res.status != 200) {
        throw ProviderError("embedding endpoint returned HTTP " +
                                std::to_string(res.status),
                            retryable_status(res.status));
      }
      const auto parsed = nlohmann::json::parse(res.body);
      const auto& data = parsed.at("data");
      if (!data.is_array() || data.size() != texts.size()) {
        throw ProviderError("embedding response has " +
                                std::to_string(data.size()) + " items for " +
                                std::to_string(texts.size()) + " inputs",
                            false);
      }
      std::vector<std::vector<float>> out(texts.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        // Honour an explicit "index" when the server reorders results.
        const std::size_t slot = data[i].value("index", i);
        if (slot >= out.size()) {
          throw ProviderError("embedding response index out of range", false, i);
        }
        out[slot] = data[i].at("embedding").get<std::vector<float>>();
        if (out[slot].size() != options_.dimension) {
          throw ProviderError("embedding has dimension " +
                                  std::to_string(out[slot].size()) + ", expected " +
                                  std::to_string(options_.dimension),
                              false, slot);
        }
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed embedding response: ") + e.what(),
                          false);
    } catch (const ProviderError& e) {
      if (!e.retryable() || last) throw;
      spdlog::warn("embedding request failed ({}), retrying", e.what());
    } catch (const TimeoutError& e) {
      if (last) throw;
      spdlog::warn("embedding request timed out ({}), retrying", e.what());
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
  }
}

// ---------------------------------------------------------------------------

namespace {

std::string safe_component(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.'
                      ? c
                      : '_');
  }
  return out;
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(*dir_);
}

std::filesystem::path EmbeddingCache::file_for(const std::string& model_id,
                                               const std::string& key) const {
  return *dir_ / safe_component(model_id) / (key + ".f32");
}

std::optional<std::vector<float>> EmbeddingCache::get(const std::string& model_id,
                                                      const std::string& key,
                                                      std::size_t dimension) {
  std::lock_guard lock(mutex_);
  if (auto it = memory_.find({model_id, key}); it != memory_.end()) {
    ++hits_;
    return it->second;
  }
  if (dir_) {
    const auto path = file_for(model_id, key);
    std::ifstream in(path, std::ios::binary);
    if (in) {
      std::vector<float> v(dimension);
      in.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(dimension * sizeof(float)));
      if (in.gcount() == static_cast<std::streamsize>(dimension * sizeof(float)) &&
          in.peek() == std::char_traits<char>::eof()) {
        memory_.emplace(std::pair{model_id, key}, v);
        ++hits_;
        return v;
      }
    }
  }
  ++misses_;
  return std::nullopt;
}

void EmbeddingCache::put(const std::string& model_id, const std::string& key,
                         const std::vector<float>& unit_vector) {
  std::lock_guard lock(mutex_);
  memory_.insert_or_assign(std::pair{model_id, key}, unit_vector);
  if (!dir_) return;
  const auto path = file_for(model_id, key);
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(unit_vector.data()),
              static_cast<std::streamsize>(unit_vector.size() * sizeof(float)));
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------

Encoder::Encoder(std::shared_ptr<EmbeddingProvider> provider,
                 std::shared_ptr<EmbeddingCache> cache, std::size_t max_in_flight,
                 std::size_t chunk_size)
    : provider_(std::move(provider)),
      cache_(cache ? std::move(cache) : std::make_shared<EmbeddingCache>()),
      model_id_(provider_->model_id()),
      dimension_(provider_->dimension()),
      max_in_flight_(std::max<std::size_t>(1, max_in_flight)),
      chunk_size_(std::max<std::size_t>(1, chunk_size)) {}

EmbeddingVector Encoder::embed_text(std::string_view text) {
  const std::string s(text);
  return embed_batch(std::span<const std::string>(&s, 1)).front();
}

std::vector<EmbeddingVector> Encoder::embed_batch(std::span<const std::string> texts) {
  std::vector<std::string> standardized(texts.size());
  std::vector<std::string> keys(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    standardized[i] = text::standardize(texts[i]);
    if (standardized[i].empty()) {
      throw Error(ErrorCode::InvalidInput,
                  "text at index " + std::to_string(i) + " is empty after normalization");
    }
    keys[i] = sha256_hex(standardized[i]);
  }

  std::vector<std::optional<std::vector<float>>> found(texts.size());
  // Unique cache misses, first occurrence wins.
  std::vector<std::size_t> pending;
  std::unordered_map<std::string, std::size_t> first_seen;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (first_seen.count(keys[i])) continue;
    first_seen.emplace(keys[i], i);
    found[i] = cache_->get(model_id_, keys[i], dimension_);
    if (!found[i]) pending.push_back(i);
  }

  for (std::size_t wave = 0; wave < pending.size();
       wave += chunk_size_ * max_in_flight_) {
    std::vector<std::pair<std::size_t, std::future<std::vector<std::vector<float>>>>>
        in_flight;
    for (std::size_t start = wave;
         start < pending.size() && start < wave + chunk_size_ * max_in_flight_;
         start += chunk_size_) {
      const std::size_t end = std::min(pending.size(), start + chunk_size_);
      std::vector<std::string> chunk;
      for (std::size_t p = start; p < end; ++p) chunk.push_back(standardized[pending[p]]);
      auto launch = in_flight.empty() ? std::launch::deferred : std::launch::async;
      in_flight.emplace_back(start, std::async(launch, [this, chunk = std::move(chunk)] {
                               return provider_->embed(chunk);
                             }));
    }
    for (auto& [start, fut] : in_flight) {
      std::vector<std::vector<float>> raw;
      try {
        raw = fut.get();
      } catch (const ProviderError& e) {
        const std::size_t offset = e.item_index().value_or(0);
        const std::size_t p = std::min(pending.size() - 1, start + offset);
        throw ProviderError(e.what(), e.retryable(), pending[p]);
      }
      for (std::size_t j = 0; j < raw.size() && start + j < pending.size(); ++j) {
        const std::size_t i = pending[start + j];
        if (raw[j].size() != dimension_) {
          throw ProviderError("provider returned dimension " +
                                  std::to_string(raw[j].size()) + ", declared " +
                                  std::to_string(dimension_),
                              false, i);
        }
        auto unit = l2_normalize(raw[j]);
        cache_->put(model_id_, keys[i], unit);
        found[i] = std::move(unit);
      }
    }
  }

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto& src = found[first_seen.at(keys[i])];
    if (!src) {
      throw ProviderError("provider returned too few vectors", false, i);
    }
    out.push_back(EmbeddingVector{*src, model_id_});
  }
  return out;
}

}  // namespace regjudge
