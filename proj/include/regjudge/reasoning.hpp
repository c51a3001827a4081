#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/corpus.hpp"
#include "regjudge/retrieval.hpp"

namespace regjudge {

enum class Applicability { Mandatory, Recommended, NotApplicable };

// "Mandatory", "Recommended", "Not Applicable".
std::string_view to_string(Applicability a);
// Closed world: the three labels, case-insensitive, with or without the space
// (or an underscore) in "Not Applicable". Anything else is nullopt.
std::optional<Applicability> parse_applicability(std::string_view s);

enum class Provenance { LLM, PseudoLabel };
std::string_view to_string(Provenance p);

struct ApplicabilityJudgment {
  std::string standard_id;
  std::string norm_id;
  std::string name;
  Applicability applicability = Applicability::NotApplicable;
  std::string justification;
  std::optional<std::string> clause;
  Region region = Region::CN;
  Provenance provenance = Provenance::LLM;

  bool operator==(const ApplicabilityJudgment&) const = default;
};

nlohmann::json to_json(const ApplicabilityJudgment& j);
ApplicabilityJudgment judgment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<ApplicabilityJudgment>& js);
std::vector<ApplicabilityJudgment> judgments_from_json(const nlohmann::json& arr);

struct PromptCandidate {
  StandardRecord record;
  RetrievalCandidate candidate;
};

enum class RegionMode { Single, Cross };
std::string_view to_string(RegionMode m);

// One worked example shown to the model: a short setting plus the JSON array
// it should produce.
struct FewShotExample {
  std::string device;
  std::string standard;
  nlohmann::json output;
};

std::vector<FewShotExample> load_few_shot(const std::filesystem::path& path);

struct PromptOptions {
  std::size_t max_candidates = 10;
  double temperature = 0.3;
  LanguagePreference language = LanguagePreference::EnFirst;
  std::vector<FewShotExample> few_shot;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.3;
  std::optional<std::uint64_t> seed;
};

nlohmann::json to_json(const ChatRequest& r);

struct PromptBundle {
  std::string device_text;
  std::vector<PromptCandidate> candidates;
  RegionMode mode = RegionMode::Single;
  std::string instructions;
  std::vector<std::string> few_shot;
  double temperature = 0.3;
  LanguagePreference language = LanguagePreference::EnFirst;

  // Instructions, cue-word rules, device text, candidate blocks, worked
  // examples and finally the required key list, in that order.
  std::string render() const;
  ChatRequest request() const;
};

PromptBundle build_prompt(std::string_view device_text,
                          std::vector<PromptCandidate> candidates, RegionMode mode,
                          const PromptOptions& options);

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string model_id() const = 0;
  // Returns the assistant message content. Throws ProviderError/TimeoutError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Deterministic test double. Rules are tried in order; the first rule whose
// substrings all occur in the concatenated request messages supplies the
// response. Transport failures can be injected for the first N calls.
class ScriptedChatProvider final : public ChatProvider {
 public:
  struct Rule {
    std::vector<std::string> when_contains;
    std::string response;
  };

  ScriptedChatProvider(std::vector<Rule> rules,
                       std::optional<std::string> default_response = std::nullopt,
                       std::string model_id = "scripted-mock");

  static std::unique_ptr<ScriptedChatProvider> from_json(const nlohmann::json& j);
  static std::unique_ptr<ScriptedChatProvider> load(const std::filesystem::path& path);

  // Throw a retryable ProviderError on the next `n` calls.
  void fail_next(int n) { fail_remaining_ = n; }
  void fail_always(bool on) { fail_always_ = on; }
  void timeout_always(bool on) { timeout_always_ = on; }
  // When no rule matches, answer with the cue-word heuristic; the default
  // response is only used for prompts the heuristic cannot read.
  void cueword_fallback(bool on) { cueword_fallback_ = on; }

  std::size_t calls() const { return calls_; }
  std::string model_id() const override { return model_id_; }
  std::string complete(const ChatRequest& request) override;

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> default_response_;
  std::string model_id_;
  std::atomic<int> fail_remaining_{0};
  std::atomic<bool> fail_always_{false};
  std::atomic<bool> timeout_always_{false};
  bool cueword_fallback_ = false;
  std::atomic<std::size_t> calls_{0};
};

// Offline heuristic provider that reads the candidate blocks back out of the
// prompt and labels them from cue words in the scope text: "shall"/"must" on
// a relevant standard gives Mandatory, "should" gives Recommended, and
// standards sharing too few words with the device are Not Applicable.
class CueWordChatProvider final : public ChatProvider {
 public:
  explicit CueWordChatProvider(std::size_t min_overlap = 2) : min_overlap_(min_overlap) {}
  std::string model_id() const override { return "cue-word-heuristic"; }
  std::string complete(const ChatRequest& request) override;

 private:
  std::size_t min_overlap_;
};

struct HttpChatOptions {
  std::string url;
  std::string api_key;
  std::string model = "gpt-4";
  std::chrono::milliseconds timeout{60000};
  std::optional<std::uint64_t> seed;
};

// OpenAI-compatible chat completions endpoint.
class HttpChatProvider final : public ChatProvider {
 public:
  explicit HttpChatProvider(HttpChatOptions options);
  // Reads REGJUDGE_LLM_URL / REGJUDGE_LLM_MODEL / REGJUDGE_LLM_KEY over `base`.
  static HttpChatOptions options_from_env(HttpChatOptions base);

  std::string model_id() const override { return options_.model; }
  std::string complete(const ChatRequest& request) override;

 private:
  HttpChatOptions options_;
};

struct Transcript {
  nlohmann::json request;
  std::string response;
  int attempts = 0;
  std::vector<std::string> errors;
};

nlohmann::json to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

struct ClassifyOptions {
  int max_retries = 2;
  // Redacted from anything that gets logged.
  std::vector<std::string> secrets;
};

struct ClassifyResult {
  std::string content;
  int attempts = 0;
  Transcript transcript;
};

// Sends the bundle with bounded retries. Throws ProviderError once retries
// are exhausted, or TimeoutError when the last attempt timed out.
ClassifyResult classify(ChatProvider& provider, const PromptBundle& bundle,
                        const ClassifyOptions& options = {});
ClassifyResult classify(ChatProvider& provider, const ChatRequest& request,
                        const ClassifyOptions& options = {});

struct ParseOptions {
  std::optional<std::size_t> max_judgments;
};

struct ParseResult {
  std::vector<ApplicabilityJudgment> judgments;
  std::size_t dropped_unknown = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t truncated = 0;
  bool repaired = false;
  // Set by classify_and_parse / parse_transcripts when the provider returned
  // an empty array; parse_judgments itself throws NoJudgments instead.
  bool no_judgments = false;
};

// Decodes the provider's JSON array. One repair pass (code fences stripped,
// trimmed to the outermost brackets) is tried before MalformedOutput. Labels
// outside the enum are MalformedOutput; an empty array is NoJudgments;
// judgments for ids that are not among the candidates are dropped and counted.
ParseResult parse_judgments(std::string_view raw,
                            std::span<const PromptCandidate> candidates,
                            const ParseOptions& options = {});

struct EnrichResult {
  std::vector<ApplicabilityJudgment> judgments;
  std::size_t dropped = 0;
};

// Overwrites standard_id, name, region and clause from the corpus record the
// judgment resolves to. Unresolvable judgments are dropped and counted.
EnrichResult enrich_judgments(std::vector<ApplicabilityJudgment> judgments,
                              std::span<const PromptCandidate> candidates,
                              const Corpus& corpus);

inline constexpr std::string_view kJsonOnlyReminder =
    "Your previous reply was not valid JSON. Return only the JSON array, with no "
    "prose and no code fences.";

struct ReasoningOutcome {
  ParseResult parsed;
  std::vector<Transcript> transcripts;
};

// classify + parse with the repair policy: one deterministic repair pass,
// then at most one re-ask carrying kJsonOnlyReminder, then MalformedOutput.
// Transcripts are appended to `outcome` as they arrive, so they survive a
// parse failure.
void classify_and_parse(ChatProvider& provider, const PromptBundle& bundle,
                        ReasoningOutcome& outcome, const ClassifyOptions& classify_options = {},
                        const ParseOptions& parse_options = {});

// Re-runs the parsing half of classify_and_parse over stored transcripts.
ParseResult parse_transcripts(std::span<const Transcript> transcripts,
                              std::span<const PromptCandidate> candidates,
                              const ParseOptions& parse_options = {});

}  // namespace regjudge
