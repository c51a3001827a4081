#include "regjudge/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>

#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/hash.hpp"
#include "regjudge/io.hpp"
#include "regjudge/text.hpp"

#ifndef REGJUDGE_DATA_DIR
#define REGJUDGE_DATA_DIR "data"
#endif

namespace regjudge {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::set<Region> parse_regions(std::string_view csv) {
  std::set<Region> out;
  std::string item;
  auto flush = [&] {
    const auto t = text::trim(item);
    item.clear();
    if (t.empty()) return;
    const auto r = parse_region(t);
    if (!r) throw Error(ErrorCode::InvalidInput, "unknown region '" + t + "'");
    out.insert(*r);
  };
  for (char c : csv) {
    if (c == ',') {
      flush();
    } else {
      item.push_back(c);
    }
  }
  flush();
  if (out.empty()) throw Error(ErrorCode::InvalidInput, "no regions given");
  return out;
}

namespace {

fs::path data_dir() {
  if (const char* env = std::getenv("REGJUDGE_DATA_DIR"); env && *env) return env;
  return REGJUDGE_DATA_DIR;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

json regions_json(const std::set<Region>& regions) {
  json arr = json::array();
  for (Region r : regions) arr.push_back(std::string(to_string(r)));
  return arr;
}

std::set<Region> regions_from_json(const json& arr) {
  std::set<Region> out;
  for (const auto& r : arr) {
    const auto region = parse_region(r.get<std::string>());
    if (!region) throw Error(ErrorCode::ConfigError, "unknown region " + r.dump());
    out.insert(*region);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  const auto data = data_dir();
  c.corpus_path = data / "corpus" / "mini_corpus.json";
  c.rules_path = data / "rules.json";
  c.synonyms_path = data / "synonyms.json";
  c.equivalence_path = data / "equivalence.json";
  c.few_shot_path = data / "prompts" / "few_shot.json";
  c.chat_script_path = data / "mock" / "chat_script.json";
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (regions.empty()) fail("at least one region is required");
  if (k < 1) fail("k must be at least 1");
  try {
    weights.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (!(divergence_threshold >= -1.0 && divergence_threshold <= 1.0)) {
    fail("divergence_threshold must lie in [-1, 1]");
  }
  if (!(temperature >= 0.0 && temperature <= 2.0)) fail("temperature must lie in [0, 2]");
  if (max_retries < 0) fail("max_retries must not be negative");
  if (regions.size() * k > max_prompt_candidates) {
    fail("regions x k = " + std::to_string(regions.size() * k) +
         " exceeds max_prompt_candidates = " + std::to_string(max_prompt_candidates));
  }
  if (embedding_provider != "hashing" && embedding_provider != "http") {
    fail("unknown embedding provider '" + embedding_provider + "'");
  }
  if (embedding_dimension < 1) fail("embedding dimension must be positive");
  if (chat_provider != "scripted" && chat_provider != "cueword" && chat_provider != "http") {
    fail("unknown chat provider '" + chat_provider + "'");
  }
  if (chat_provider == "scripted" && chat_script_path.empty()) {
    fail("the scripted chat provider needs a script file");
  }
  if (corpus_path.empty()) fail("corpus path is required");
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir, RunConfig base) {
  static const std::set<std::string> known = {
      "regions", "k", "weights", "divergence_threshold", "language_preference", "temperature",
      "max_retries", "max_prompt_candidates", "seed", "providers", "paths"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
  }
  RunConfig c = std::move(base);
  try {
    if (j.contains("regions")) c.regions = regions_from_json(j["regions"]);
    c.k = j.value("k", c.k);
    if (j.contains("weights")) {
      c.weights.dense = j["weights"].value("dense", c.weights.dense);
      c.weights.keyword = j["weights"].value("keyword", c.weights.keyword);
    }
    c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
    if (j.contains("language_preference")) {
      const auto lang = parse_language_preference(j["language_preference"].get<std::string>());
      if (!lang) throw Error(ErrorCode::ConfigError, "unknown language_preference");
      c.language = *lang;
    }
    c.temperature = j.value("temperature", c.temperature);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_prompt_candidates = j.value("max_prompt_candidates", c.max_prompt_candidates);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();

    const json providers = j.value("providers", json::object());
    if (providers.contains("embedding")) {
      const auto& e = providers["embedding"];
      c.embedding_provider = e.value("kind", c.embedding_provider);
      c.embedding_dimension = e.value("dimension", c.embedding_dimension);
      c.embedding_model = e.value("model", c.embedding_model);
    }
    if (providers.contains("chat")) {
      const auto& ch = providers["chat"];
      c.chat_provider = ch.value("kind", c.chat_provider);
      c.chat_model = ch.value("model", c.chat_model);
      if (ch.contains("script")) c.chat_script_path = resolve(base_dir, ch["script"]);
    }

    const json paths = j.value("paths", json::object());
    auto path_field = [&](const char* key, fs::path& target) {
      if (!paths.contains(key)) return;
      target = paths[key].is_null() ? fs::path{} : resolve(base_dir, paths[key]);
    };
    path_field("corpus", c.corpus_path);
    path_field("index", c.index_path);
    path_field("rules", c.rules_path);
    path_field("synonyms", c.synonyms_path);
    path_field("equivalence", c.equivalence_path);
    path_field("few_shot", c.few_shot_path);
    path_field("run_root", c.run_root);
    path_field("cache_dir", c.cache_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (path.extension() == ".toml") {
    throw Error(ErrorCode::ConfigError, "TOML configs are not supported; use JSON");
  }
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void RunConfig::apply_env() {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  try {
    if (auto v = env("REGJUDGE_REGIONS")) regions = parse_regions(*v);
    if (auto v = env("REGJUDGE_K")) k = std::stoul(*v);
    if (auto v = env("REGJUDGE_DIVERGENCE_THRESHOLD")) divergence_threshold = std::stod(*v);
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad REGJUDGE_* numeric override: ") + e.what());
  }
  if (auto v = env("REGJUDGE_LANGUAGE")) {
    const auto lang = parse_language_preference(*v);
    if (!lang) throw Error(ErrorCode::ConfigError, "unknown REGJUDGE_LANGUAGE " + *v);
    language = *lang;
  }
  if (auto v = env("REGJUDGE_CORPUS")) corpus_path = *v;
  if (auto v = env("REGJUDGE_INDEX")) index_path = *v;
  if (auto v = env("REGJUDGE_RULES")) rules_path = *v;
  if (auto v = env("REGJUDGE_RUN_ROOT")) run_root = *v;
  if (auto v = env("REGJUDGE_CACHE_DIR")) cache_dir = *v;
  if (auto v = env("REGJUDGE_CHAT_PROVIDER")) chat_provider = *v;
  if (auto v = env("REGJUDGE_CHAT_SCRIPT")) chat_script_path = *v;
  if (auto v = env("REGJUDGE_LLM_MODEL")) chat_model = *v;
  if (auto v = env("REGJUDGE_EMBED_PROVIDER")) embedding_provider = *v;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

json retrieval_json(const std::map<Region, std::vector<RetrievalCandidate>>& retrieval) {
  json j = json::object();
  for (const auto& [region, cands] : retrieval) {
    json arr = json::array();
    for (const auto& c : cands) arr.push_back(to_json(c));
    j[std::string(to_string(region))] = arr;
  }
  return j;
}

std::map<Region, std::vector<RetrievalCandidate>> retrieval_from_json(const json& j) {
  std::map<Region, std::vector<RetrievalCandidate>> out;
  for (const auto& [region, arr] : j.items()) {
    const auto r = parse_region(region);
    if (!r) throw Error(ErrorCode::InvalidInput, "unknown retrieval region " + region);
    auto& list = out[*r];
    for (const auto& c : arr) list.push_back(candidate_from_json(c));
  }
  return out;
}

json transcripts_json(const std::vector<Transcript>& ts) {
  json arr = json::array();
  for (const auto& t : ts) arr.push_back(to_json(t));
  return arr;
}

json reasoning_json(const ReasoningStats& s) {
  return {{"dropped_unknown", s.dropped_unknown},
          {"dropped_duplicate", s.dropped_duplicate},
          {"dropped_unresolved", s.dropped_unresolved},
          {"repaired", s.repaired},
          {"no_judgments", s.no_judgments}};
}

ReasoningStats reasoning_from_json(const json& j) {
  ReasoningStats s;
  s.dropped_unknown = j.value("dropped_unknown", std::size_t{0});
  s.dropped_duplicate = j.value("dropped_duplicate", std::size_t{0});
  s.dropped_unresolved = j.value("dropped_unresolved", std::size_t{0});
  s.repaired = j.value("repaired", false);
  s.no_judgments = j.value("no_judgments", false);
  return s;
}

json run_json(const RunArtifact& a) {
  json j = {{"id", a.id},
            {"status", a.status},
            {"device_text", a.device_text},
            {"reasoning", reasoning_json(a.reasoning)}};
  if (a.error) {
    j["error"] = {{"stage", a.error->stage}, {"code", a.error->code}, {"message", a.error->message}};
  }
  return j;
}

constexpr const char* kParts[] = {"run.json",        "config.json",     "retrieval.json",
                                  "transcripts.json", "judgments.json", "matrix.json",
                                  "recommendations.json", "timings.json"};

std::map<std::string, std::string> part_contents(const RunArtifact& a) {
  return {{"run.json", run_json(a).dump(2) + "\n"},
          {"config.json", a.config.dump(2) + "\n"},
          {"retrieval.json", retrieval_json(a.retrieval).dump(2) + "\n"},
          {"transcripts.json", transcripts_json(a.transcripts).dump(2) + "\n"},
          {"judgments.json", to_json(a.judgments).dump(2) + "\n"},
          {"matrix.json", serialize_matrix(a.matrix)},
          {"recommendations.json", to_json(a.recommendations).dump(2) + "\n"},
          {"timings.json", json(a.timings_ms).dump(2) + "\n"}};
}

}  // namespace

json to_json(const RunArtifact& a) {
  json j = run_json(a);
  j["config"] = a.config;
  j["retrieval"] = retrieval_json(a.retrieval);
  j["transcripts"] = transcripts_json(a.transcripts);
  j["judgments"] = to_json(a.judgments);
  j["matrix"] = to_json(a.matrix);
  j["recommendations"] = to_json(a.recommendations);
  j["timings_ms"] = a.timings_ms;
  return j;
}

RunArtifact artifact_from_json(const json& j) {
  RunArtifact a;
  a.id = j.at("id").get<std::string>();
  a.status = j.at("status").get<std::string>();
  a.device_text = j.at("device_text").get<std::string>();
  a.config = j.at("config");
  a.retrieval = retrieval_from_json(j.at("retrieval"));
  for (const auto& t : j.at("transcripts")) a.transcripts.push_back(transcript_from_json(t));
  a.judgments = judgments_from_json(j.at("judgments"));
  a.reasoning = reasoning_from_json(j.value("reasoning", json::object()));
  a.matrix = matrix_from_json(j.at("matrix"));
  a.recommendations = recommendations_from_json(j.at("recommendations"));
  a.timings_ms = j.value("timings_ms", std::map<std::string, double>{});
  if (j.contains("error")) {
    const auto& e = j["error"];
    a.error = StageFailure{e.at("stage").get<std::string>(), e.at("code").get<std::string>(),
                           e.at("message").get<std::string>()};
  }
  return a;
}

std::string artifact_id(const RunArtifact& a) {
  const json canonical = {{"config", a.config},
                          {"device_text", a.device_text},
                          {"retrieval", retrieval_json(a.retrieval)},
                          {"transcripts", transcripts_json(a.transcripts)}};
  return sha256_hex(canonical.dump()).substr(0, 16);
}

ArtifactStore::ArtifactStore(fs::path root) : root_(std::move(root)) {}

fs::path ArtifactStore::dir_for(const std::string& id) const {
  static const std::regex valid("^[0-9a-f]{16}$");
  if (!std::regex_match(id, valid)) {
    throw Error(ErrorCode::NotFound, "no artifact with id '" + id + "'");
  }
  return root_ / id;
}

bool ArtifactStore::exists(const std::string& id) const {
  try {
    return fs::exists(dir_for(id) / "manifest.json");
  } catch (const Error&) {
    return false;
  }
}

void ArtifactStore::save(const RunArtifact& a) const {
  const auto dir = dir_for(a.id);
  fs::create_directories(dir);
  json manifest = {{"id", a.id}, {"files", json::object()}};
  for (const auto& [name, content] : part_contents(a)) {
    write_file_atomic(dir / name, content);
    manifest["files"][name] = sha256_hex(content);
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> ArtifactStore::tampered_files(const std::string& id) const {
  const auto dir = dir_for(id);
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorCode::NotFound, "no artifact with id '" + id + "'");
  }
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error&) {
    return {"manifest.json"};
  }
  std::vector<std::string> out;
  for (const char* name : kParts) {
    const auto expected = manifest["files"].value(name, "");
    std::string actual;
    try {
      actual = sha256_hex(read_file(dir / name));
    } catch (const Error&) {
      actual.clear();
    }
    if (actual.empty() || actual != expected) out.emplace_back(name);
  }
  return out;
}

RunArtifact ArtifactStore::load(const std::string& id, bool verify) const {
  const auto dir = dir_for(id);
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorCode::NotFound, "no artifact with id '" + id + "'");
  }
  if (verify) {
    const auto bad = tampered_files(id);
    if (!bad.empty()) {
      std::string list;
      for (const auto& b : bad) list += (list.empty() ? "" : ", ") + b;
      throw Error(ErrorCode::IntegrityError,
                  "artifact " + id + " does not match its manifest: " + list);
    }
  }
  auto part = [&](const char* name) -> json {
    try {
      return json::parse(read_file(dir / name));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::IntegrityError, std::string(name) + " is not valid JSON: " + e.what());
    }
  };
  const json run = part("run.json");
  json j = run;
  j["config"] = part("config.json");
  j["retrieval"] = part("retrieval.json");
  j["transcripts"] = fs::exists(dir / "transcripts.json") ? part("transcripts.json") : json::array();
  j["judgments"] = part("judgments.json");
  j["matrix"] = part("matrix.json");
  j["recommendations"] = part("recommendations.json");
  j["timings_ms"] = part("timings.json");
  try {
    return artifact_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IntegrityError, "artifact " + id + " is malformed: " + e.what());
  }
}

json to_json(const ReplayReport& r) {
  return {{"id", r.id},
          {"equal", r.equal},
          {"integrity_ok", r.integrity_ok},
          {"tampered_files", r.tampered_files},
          {"differences", r.differences}};
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(Parts parts)
    : config_(std::move(parts.config)),
      corpus_(std::make_unique<Corpus>(std::move(parts.corpus))),
      encoder_(std::move(parts.encoder)),
      chat_(std::move(parts.chat)),
      rules_(std::move(parts.rules)),
      equivalence_(std::move(parts.equivalence)),
      few_shot_(std::move(parts.few_shot)),
      store_(config_.run_root) {
  config_.validate();
  if (!encoder_ || !chat_) throw Error(ErrorCode::ConfigError, "engine needs both providers");
  corpus_hash_ = corpus_->content_hash();
  json shots = json::array();
  for (const auto& f : few_shot_) shots.push_back({f.device, f.standard, f.output});
  few_shot_hash_ = sha256_hex(shots.dump());
  matcher_ = std::make_unique<KeywordMatcher>(*corpus_, std::move(parts.synonyms));

  if (parts.index) {
    if (parts.index->model_id() != encoder_->model_id() ||
        parts.index->dimension() != encoder_->dimension()) {
      throw Error(ErrorCode::DimensionError,
                  "index was built with " + parts.index->model_id() + " but the encoder is " +
                      encoder_->model_id());
    }
    if (parts.index->built_from() != corpus_hash_) {
      throw Error(ErrorCode::ConfigError, "index was built from a different corpus");
    }
    index_ = std::move(parts.index);
  }
  for (const char* var : {"REGJUDGE_LLM_KEY", "REGJUDGE_EMBED_KEY", "REGJUDGE_API_KEY"}) {
    if (const char* v = std::getenv(var); v && *v) secrets_.emplace_back(v);
  }
}

Engine::Parts Engine::load_parts(const RunConfig& config) {
  config.validate();
  Parts parts;
  parts.config = config;

  auto loaded = load_corpus(config.corpus_path.string());
  if (!loaded.rejects.empty()) {
    spdlog::warn("{} corpus record(s) rejected while loading {}", loaded.rejects.size(),
                 config.corpus_path.string());
  }
  parts.corpus = std::move(loaded.corpus);

  std::shared_ptr<EmbeddingProvider> embed;
  if (config.embedding_provider == "http") {
    HttpEmbeddingOptions o;
    o.model = config.embedding_model;
    o.dimension = config.embedding_dimension;
    embed = std::make_shared<HttpEmbeddingProvider>(HttpEmbeddingProvider::options_from_env(o));
  } else {
    embed = std::make_shared<HashingEmbeddingProvider>(config.embedding_dimension);
  }
  auto cache = config.cache_dir.empty() ? std::make_shared<EmbeddingCache>()
                                        : std::make_shared<EmbeddingCache>(config.cache_dir);
  parts.encoder = std::make_shared<Encoder>(embed, cache);

  if (config.chat_provider == "http") {
    HttpChatOptions o;
    o.model = config.chat_model;
    o.seed = config.seed;
    parts.chat = std::make_shared<HttpChatProvider>(HttpChatProvider::options_from_env(o));
  } else if (config.chat_provider == "cueword") {
    parts.chat = std::make_shared<CueWordChatProvider>();
  } else {
    parts.chat = ScriptedChatProvider::load(config.chat_script_path);
  }

  if (!config.rules_path.empty()) parts.rules = RuleSet::load(config.rules_path);
  if (!config.synonyms_path.empty()) parts.synonyms = SynonymDictionary::load(config.synonyms_path);
  if (!config.equivalence_path.empty()) {
    parts.equivalence = EquivalenceMap::load(config.equivalence_path);
  }
  if (!config.few_shot_path.empty()) parts.few_shot = load_few_shot(config.few_shot_path);
  if (!config.index_path.empty() && fs::exists(config.index_path)) {
    parts.index = VectorIndex::load(config.index_path);
  }
  return parts;
}

std::unique_ptr<Engine> Engine::from_config(const RunConfig& config) {
  return std::make_unique<Engine>(load_parts(config));
}

const VectorIndex& Engine::index() {
  std::lock_guard lock(index_mutex_);
  if (!index_) {
    index_ = build_index(*corpus_, *encoder_, {}, config_.language);
  }
  if (region_indexes_.empty()) {
    for (Region r : {Region::CN, Region::US}) region_indexes_.emplace(r, index_->filter(r));
    index_hash_ = index_->content_hash();
  }
  return *index_;
}

std::string Engine::index_fingerprint() {
  index();
  return index_hash_;
}

json Engine::config_snapshot(const std::set<Region>& regions, std::size_t k) {
  json j = {{"regions", regions_json(regions)},
            {"k", k},
            {"weights", {{"dense", config_.weights.dense}, {"keyword", config_.weights.keyword}}},
            {"divergence_threshold", config_.divergence_threshold},
            {"language_preference", std::string(to_string(config_.language))},
            {"temperature", config_.temperature},
            {"max_retries", config_.max_retries},
            {"max_prompt_candidates", config_.max_prompt_candidates},
            {"seed", config_.seed ? json(*config_.seed) : json(nullptr)},
            {"embedding",
             {{"provider", config_.embedding_provider},
              {"model_id", encoder_->model_id()},
              {"dimension", encoder_->dimension()}}},
            {"chat", {{"provider", config_.chat_provider}, {"model_id", chat_->model_id()}}},
            {"fingerprints",
             {{"corpus", corpus_hash_},
              {"rules", rules_.version()},
              {"few_shot", few_shot_hash_}}}};
  if (!index_hash_.empty()) j["fingerprints"]["index"] = index_hash_;
  return j;
}

std::vector<PromptCandidate> Engine::prompt_candidates(
    const std::map<Region, std::vector<RetrievalCandidate>>& retrieval) const {
  std::vector<PromptCandidate> out;
  for (const auto& [region, cands] : retrieval) {
    for (const auto& c : cands) {
      const auto* record = corpus_->find(c.norm_id, c.region);
      if (!record) {
        throw Error(ErrorCode::IntegrityError,
                    "retrieved " + c.norm_id + " is missing from the loaded corpus");
      }
      out.push_back({*record, c});
    }
  }
  return out;
}

std::vector<ApplicabilityJudgment> Engine::settle(ParseResult parsed,
                                                  const std::vector<PromptCandidate>& candidates,
                                                  ReasoningStats& stats) const {
  stats.dropped_unknown = parsed.dropped_unknown;
  stats.dropped_duplicate = parsed.dropped_duplicate;
  stats.repaired = parsed.repaired;
  stats.no_judgments = parsed.no_judgments;
  auto enriched = enrich_judgments(std::move(parsed.judgments), candidates, *corpus_);
  stats.dropped_unresolved = enriched.dropped;
  std::vector<ApplicabilityJudgment> out;
  std::set<std::pair<std::string, Region>> seen;
  for (auto& j : enriched.judgments) {
    if (!seen.insert({j.norm_id, j.region}).second) {
      ++stats.dropped_duplicate;
      continue;
    }
    out.push_back(std::move(j));
  }
  return out;
}

ComplianceMatrix Engine::compare(const std::string& device_text, const std::set<Region>& regions,
                                 double threshold,
                                 const std::vector<ApplicabilityJudgment>& judgments) {
  const RegionMode mode = regions.size() > 1 ? RegionMode::Cross : RegionMode::Single;
  auto groups = align_groups(judgments, equivalence_);
  const auto detected =
      detect_conflicts(groups, encoder_.get(), DetectOptions{threshold, mode, regions});
  auto matrix = build_matrix(device_text, mode, regions, std::move(groups), detected.flags);
  json warnings = json::array();
  if (!detected.warning.empty()) warnings.push_back(detected.warning);
  matrix.metadata = {{"divergence_check", detected.divergence_skipped ? "skipped" : "ok"},
                     {"divergence_threshold", threshold},
                     {"rules_version", rules_.version()},
                     {"corpus_fingerprint", corpus_hash_},
                     {"embedding_model", encoder_->model_id()},
                     {"warnings", warnings}};
  return matrix;
}

std::vector<Recommendation> Engine::advise(ComplianceMatrix& matrix,
                                           const std::vector<ApplicabilityJudgment>& judgments,
                                           const std::set<Region>& regions) const {
  auto recs = rules_.suggest(judgments, matrix.device_text, regions);
  for (auto& r : rules_.follow_up(matrix, regions)) {
    const bool dup = std::any_of(recs.begin(), recs.end(), [&](const Recommendation& o) {
      return o.kind == r.kind && o.text == r.text;
    });
    if (!dup) recs.push_back(std::move(r));
  }
  matrix.recommendations = to_json(recs);
  return recs;
}

RunArtifact Engine::judge(std::string_view device_text, const JudgeOptions& options) {
  const auto regions = options.regions.value_or(config_.regions);
  const std::size_t k = options.k.value_or(config_.k);
  {
    RunConfig probe = config_;
    probe.regions = regions;
    probe.k = k;
    try {
      probe.validate();
    } catch (const Error& e) {
      throw StageError("perception", ErrorCode::InvalidInput, e.what());
    }
  }
  const RegionMode mode = regions.size() > 1 ? RegionMode::Cross : RegionMode::Single;

  RunArtifact a;
  a.device_text = text::trim(device_text);
  a.matrix = build_matrix(a.device_text, mode, regions, {}, {});

  auto stage = [&](const char* name, auto&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const Error& e) {
      a.status = "failed";
      a.error = StageFailure{name, std::string(to_string(e.code())), e.what()};
      a.config = a.config.empty() ? config_snapshot(regions, k) : a.config;
      a.id = artifact_id(a);
      try {
        store_.save(a);
      } catch (const std::exception& save_error) {
        spdlog::error("could not persist partial artifact: {}", save_error.what());
      }
      throw StageError(name, e.code(), std::string(name) + ": " + e.what());
    }
    a.timings_ms[name] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
  };

  if (a.device_text.empty()) {
    throw StageError("perception", ErrorCode::InvalidInput, "device description is empty");
  }

  EmbeddingVector query;
  stage("perception", [&] { query = encoder_->embed_text(a.device_text); });

  stage("retrieval", [&] {
    index();
    a.config = config_snapshot(regions, k);
    for (Region r : regions) {
      a.retrieval[r] = hybrid_search(region_indexes_.at(r), *matcher_, query, a.device_text, k,
                                     config_.weights);
    }
  });

  std::vector<PromptCandidate> candidates;
  std::optional<PromptBundle> bundle;
  stage("context", [&] {
    candidates = prompt_candidates(a.retrieval);
    if (candidates.empty()) return;
    PromptOptions po;
    po.max_candidates = config_.max_prompt_candidates;
    po.temperature = config_.temperature;
    po.language = config_.language;
    po.few_shot = few_shot_;
    bundle = build_prompt(a.device_text, candidates, mode, po);
  });

  stage("reasoning", [&] {
    if (!bundle) {
      spdlog::warn("no candidates retrieved; skipping the provider call");
      return;
    }
    ReasoningOutcome outcome;
    ClassifyOptions co;
    co.max_retries = config_.max_retries;
    co.secrets = secrets_;
    try {
      classify_and_parse(*chat_, *bundle, outcome, co);
    } catch (...) {
      a.transcripts = std::move(outcome.transcripts);
      throw;
    }
    a.transcripts = std::move(outcome.transcripts);
    if (outcome.parsed.no_judgments) spdlog::warn("provider returned no judgments");
    a.judgments = settle(std::move(outcome.parsed), candidates, a.reasoning);
  });

  stage("compliance", [&] {
    a.matrix = compare(a.device_text, regions, config_.divergence_threshold, a.judgments);
  });
  stage("gap_analysis", [&] { a.recommendations = advise(a.matrix, a.judgments, regions); });

  a.id = artifact_id(a);
  store_.save(a);
  return a;
}

ReplayReport Engine::replay(const std::string& id) {
  if (!store_.exists(id)) throw Error(ErrorCode::ReplayError, "no stored artifact '" + id + "'");
  ReplayReport report;
  report.id = id;
  RunArtifact stored;
  try {
    stored = store_.load(id, false);
  } catch (const Error& e) {
    throw Error(ErrorCode::ReplayError, std::string("cannot read artifact: ") + e.what());
  }
  report.tampered_files = store_.tampered_files(id);
  report.integrity_ok = report.tampered_files.empty();

  const auto regions = regions_from_json(stored.config.at("regions"));
  const double threshold = stored.config.at("divergence_threshold").get<double>();
  if (stored.config.at("fingerprints").at("corpus").get<std::string>() != corpus_hash_) {
    throw Error(ErrorCode::ReplayError, "artifact was produced from a different corpus");
  }
  const auto candidates = prompt_candidates(stored.retrieval);
  if (!candidates.empty() && stored.transcripts.empty()) {
    throw Error(ErrorCode::ReplayError, "artifact " + id + " has no provider transcripts");
  }

  RunArtifact fresh = stored;
  fresh.judgments.clear();
  fresh.reasoning = {};
  if (!candidates.empty()) {
    fresh.judgments =
        settle(parse_transcripts(stored.transcripts, candidates), candidates, fresh.reasoning);
  }
  fresh.matrix = compare(stored.device_text, regions, threshold, fresh.judgments);
  fresh.recommendations = advise(fresh.matrix, fresh.judgments, regions);

  auto record = [&](const char* part, const json& before, const json& after) {
    if (before != after) report.differences[part] = json::diff(before, after);
  };
  record("judgments", to_json(stored.judgments), to_json(fresh.judgments));
  record("reasoning", reasoning_json(stored.reasoning), reasoning_json(fresh.reasoning));
  record("matrix", to_json(stored.matrix), to_json(fresh.matrix));
  record("recommendations", to_json(stored.recommendations), to_json(fresh.recommendations));
  report.equal = report.differences.empty();
  report.recomputed = std::move(fresh);
  return report;
}

}  // namespace regjudge
