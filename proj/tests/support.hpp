#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <utility>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/corpus.hpp"
#include "regjudge/io.hpp"
#include "regjudge/json_schema.hpp"
#include "regjudge/pipeline.hpp"
#include "regjudge/reasoning.hpp"

namespace regjudge::testing {

inline std::filesystem::path data_dir() { return REGJUDGE_TEST_DATA_DIR; }
inline std::filesystem::path schema_dir() { return REGJUDGE_TEST_SCHEMA_DIR; }
inline std::filesystem::path fixture_dir() { return REGJUDGE_TEST_FIXTURE_DIR; }

inline JsonSchema schema(const std::string& name) {
  return JsonSchema::load(schema_dir() / (name + ".schema.json"));
}

inline const std::string kCaseStudy =
    "Single-use vacuum blood collection tube with anticoagulant additive for venous blood "
    "specimen collection, used with centrifuges and automated blood analyzers in hospital "
    "laboratories.";

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("regjudge-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline StandardRecord make_record(const std::string& id, Region region, const std::string& text,
                                  const std::string& status = "Current") {
  StandardRecord r;
  r.id = id;
  r.norm_id = normalize_standard_id(id);
  r.title_en = id;
  r.scope_en = text;
  r.source_text = text;
  r.region = region;
  r.status = status;
  r.organization = region == Region::CN ? "NMPA" : "FDA";
  return r;
}

inline Corpus mini_corpus() { return load_corpus((data_dir() / "corpus/mini_corpus.json").string()).corpus; }

// Prompt candidates for (norm_id, region) pairs looked up in `corpus`.
inline std::vector<PromptCandidate> prompt_candidates(
    const Corpus& corpus, const std::vector<std::pair<std::string, Region>>& keys) {
  std::vector<PromptCandidate> out;
  for (const auto& [norm_id, region] : keys) {
    const auto* r = corpus.find(norm_id, region);
    if (!r) throw std::runtime_error("fixture record missing: " + norm_id);
    RetrievalCandidate c;
    c.norm_id = r->norm_id;
    c.region = r->region;
    c.rank = static_cast<int>(out.size() + 1);
    out.push_back({*r, c});
  }
  return out;
}

// Bundled configuration with artifacts written under `run_root`.
inline RunConfig offline_config(const std::filesystem::path& run_root,
                                std::set<Region> regions = {Region::CN, Region::US}) {
  auto c = RunConfig::defaults();
  c.regions = std::move(regions);
  c.run_root = run_root;
  return c;
}

// Random lowercase words drawn from a small vocabulary so that texts overlap.
class TextGen {
 public:
  explicit TextGen(std::uint64_t seed) : rng_(seed) {}

  std::string words(std::size_t min_words, std::size_t max_words) {
    static const std::vector<std::string> vocab = {
        "blood",  "tube",     "sterile", "glucose",  "catheter", "implant", "elbow",
        "mask",   "pressure", "monitor", "infusion", "syringe",  "oxygen",  "cuff",
        "sensor", "venous",   "single",  "use",      "electrical", "safety", "analyzer",
        "laboratory", "additive", "sealed", "shall", "should", "wearable", "device"};
    std::uniform_int_distribution<std::size_t> len(min_words, max_words);
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::string out;
    const auto n = len(rng_);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out.push_back(' ');
      out += vocab[pick(rng_)];
    }
    return out;
  }

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace regjudge::testing
