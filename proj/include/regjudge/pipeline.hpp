#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/advice.hpp"
#include "regjudge/comparison.hpp"
#include "regjudge/corpus.hpp"
#include "regjudge/embedding.hpp"
#include "regjudge/reasoning.hpp"
#include "regjudge/retrieval.hpp"

namespace regjudge {

struct RunConfig {
  std::set<Region> regions{Region::CN};
  std::size_t k = 5;
  FusionWeights weights;
  double divergence_threshold = 0.75;
  LanguagePreference language = LanguagePreference::EnFirst;
  double temperature = 0.3;
  int max_retries = 2;
  std::size_t max_prompt_candidates = 10;
  std::optional<std::uint64_t> seed;

  // "hashing" or "http".
  std::string embedding_provider = "hashing";
  std::size_t embedding_dimension = 64;
  std::string embedding_model;
  // "scripted", "cueword" or "http".
  std::string chat_provider = "scripted";
  std::string chat_model = "gpt-4";

  std::filesystem::path corpus_path;
  std::filesystem::path index_path;
  std::filesystem::path rules_path;
  std::filesystem::path synonyms_path;
  std::filesystem::path equivalence_path;
  std::filesystem::path few_shot_path;
  std::filesystem::path chat_script_path;
  std::filesystem::path run_root = "regjudge-runs";
  std::filesystem::path cache_dir;

  // Throws Error{ConfigError}.
  void validate() const;

  // Bundled data files under the install's data directory.
  static RunConfig defaults();
  // JSON config; relative paths resolve against the file's directory.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                             RunConfig base = defaults());
  // REGJUDGE_* overrides. Secrets are read by the providers, never stored here.
  void apply_env();
};

std::set<Region> parse_regions(std::string_view csv);

struct ReasoningStats {
  std::size_t dropped_unknown = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t dropped_unresolved = 0;
  bool repaired = false;
  bool no_judgments = false;

  bool operator==(const ReasoningStats&) const = default;
};

struct StageFailure {
  std::string stage;
  std::string code;
  std::string message;
};

struct RunArtifact {
  std::string id;
  std::string status = "complete";
  std::string device_text;
  nlohmann::json config = nlohmann::json::object();
  std::map<Region, std::vector<RetrievalCandidate>> retrieval;
  std::vector<Transcript> transcripts;
  std::vector<ApplicabilityJudgment> judgments;
  ReasoningStats reasoning;
  ComplianceMatrix matrix;
  std::vector<Recommendation> recommendations;
  std::map<std::string, double> timings_ms;
  std::optional<StageFailure> error;
};

nlohmann::json to_json(const RunArtifact& a);
RunArtifact artifact_from_json(const nlohmann::json& j);

// First 16 hex digits of SHA-256 over config, device text, retrieval output
// and transcripts. Timings are excluded.
std::string artifact_id(const RunArtifact& a);

// One directory per run under `root`, one JSON file per artifact part, plus a
// manifest of SHA-256 digests written last. Every file is written atomically.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  void save(const RunArtifact& a) const;
  bool exists(const std::string& id) const;
  // Throws Error{NotFound} for an unknown id and Error{IntegrityError} when a
  // file no longer matches the manifest (unless verify is false).
  RunArtifact load(const std::string& id, bool verify = true) const;
  // Files whose digest differs from the manifest.
  std::vector<std::string> tampered_files(const std::string& id) const;

 private:
  std::filesystem::path dir_for(const std::string& id) const;

  std::filesystem::path root_;
};

struct JudgeOptions {
  std::optional<std::set<Region>> regions;
  std::optional<std::size_t> k;
};

struct ReplayReport {
  std::string id;
  bool equal = true;
  bool integrity_ok = true;
  std::vector<std::string> tampered_files;
  // JSON Patch from the stored part to the recomputed one, keyed by part.
  nlohmann::json differences = nlohmann::json::object();
  RunArtifact recomputed;
};

nlohmann::json to_json(const ReplayReport& r);

// Loaded corpus, index, providers and rules for a configuration. judge() may
// be called from several threads.
class Engine {
 public:
  struct Parts {
    RunConfig config;
    Corpus corpus;
    std::optional<VectorIndex> index;
    std::shared_ptr<Encoder> encoder;
    std::shared_ptr<ChatProvider> chat;
    RuleSet rules;
    SynonymDictionary synonyms;
    EquivalenceMap equivalence;
    std::vector<FewShotExample> few_shot;
  };

  explicit Engine(Parts parts);
  // Loads every file named in the config and constructs the providers.
  static Parts load_parts(const RunConfig& config);
  static std::unique_ptr<Engine> from_config(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  const Corpus& corpus() const { return *corpus_; }
  const RuleSet& rules() const { return rules_; }
  Encoder& encoder() { return *encoder_; }
  ChatProvider& chat() { return *chat_; }
  const ArtifactStore& store() const { return store_; }

  // Builds the index if the engine was created without one. Throws
  // Error{EmptyIndex} for an empty corpus.
  const VectorIndex& index();
  std::string corpus_fingerprint() const { return corpus_hash_; }
  std::string index_fingerprint();
  std::string few_shot_fingerprint() const { return few_shot_hash_; }

  // Runs every stage and persists the artifact. Stage failures are rethrown
  // as StageError after the partial artifact has been saved.
  RunArtifact judge(std::string_view device_text, const JudgeOptions& options = {});

  // Recomputes every post-provider stage from stored transcripts.
  ReplayReport replay(const std::string& id);

 private:
  std::vector<PromptCandidate> prompt_candidates(
      const std::map<Region, std::vector<RetrievalCandidate>>& retrieval) const;
  nlohmann::json config_snapshot(const std::set<Region>& regions, std::size_t k);
  // Enrichment plus a final (norm_id, region) de-duplication.
  std::vector<ApplicabilityJudgment> settle(ParseResult parsed,
                                            const std::vector<PromptCandidate>& candidates,
                                            ReasoningStats& stats) const;
  ComplianceMatrix compare(const std::string& device_text, const std::set<Region>& regions,
                           double threshold,
                           const std::vector<ApplicabilityJudgment>& judgments);
  std::vector<Recommendation> advise(ComplianceMatrix& matrix,
                                     const std::vector<ApplicabilityJudgment>& judgments,
                                     const std::set<Region>& regions) const;

  RunConfig config_;
  std::unique_ptr<Corpus> corpus_;
  std::string corpus_hash_;
  std::optional<VectorIndex> index_;
  std::map<Region, VectorIndex> region_indexes_;
  std::mutex index_mutex_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<ChatProvider> chat_;
  RuleSet rules_;
  EquivalenceMap equivalence_;
  std::vector<FewShotExample> few_shot_;
  std::string few_shot_hash_;
  std::string index_hash_;
  std::vector<std::string> secrets_;
  std::unique_ptr<KeywordMatcher> matcher_;
  ArtifactStore store_;
};

}  // namespace regjudge
