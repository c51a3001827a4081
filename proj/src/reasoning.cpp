#include "regjudge/reasoning.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/http_client.hpp"
#include "regjudge/io.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

std::string_view to_string(Applicability a) {
  switch (a) {
    case Applicability::Mandatory: return "Mandatory";
    case Applicability::Recommended: return "Recommended";
    case Applicability::NotApplicable: return "Not Applicable";
  }
  return "Not Applicable";
}

std::optional<Applicability> parse_applicability(std::string_view s) {
  std::string squashed;
  for (char c : text::to_lower_ascii(text::trim(s))) {
    if (c != ' ' && c != '_') squashed.push_back(c);
  }
  if (squashed == "mandatory") return Applicability::Mandatory;
  if (squashed == "recommended") return Applicability::Recommended;
  if (squashed == "notapplicable") return Applicability::NotApplicable;
  return std::nullopt;
}

std::string_view to_string(Provenance p) {
  return p == Provenance::LLM ? "LLM" : "PseudoLabel";
}

std::string_view to_string(RegionMode m) {
  return m == RegionMode::Single ? "SINGLE" : "CROSS";
}

json to_json(const ApplicabilityJudgment& j) {
  return {{"standard_id", j.standard_id},
          {"norm_id", j.norm_id},
          {"name", j.name},
          {"applicability", std::string(to_string(j.applicability))},
          {"justification", j.justification},
          {"clause", j.clause ? json(*j.clause) : json(nullptr)},
          {"region", std::string(to_string(j.region))},
          {"provenance", std::string(to_string(j.provenance))}};
}

ApplicabilityJudgment judgment_from_json(const json& j) {
  ApplicabilityJudgment out;
  out.standard_id = j.at("standard_id").get<std::string>();
  out.norm_id = j.contains("norm_id") ? j.at("norm_id").get<std::string>()
                                      : normalize_standard_id(out.standard_id);
  out.name = j.value("name", "");
  const auto label = parse_applicability(j.at("applicability").get<std::string>());
  if (!label) throw Error(ErrorCode::InvalidInput, "unknown applicability label");
  out.applicability = *label;
  out.justification = j.value("justification", "");
  if (j.contains("clause") && j["clause"].is_string()) out.clause = j["clause"].get<std::string>();
  const auto region = parse_region(j.at("region").get<std::string>());
  if (!region) throw Error(ErrorCode::InvalidInput, "unknown region in judgment");
  out.region = *region;
  out.provenance = j.value("provenance", "LLM") == "PseudoLabel" ? Provenance::PseudoLabel
                                                                  : Provenance::LLM;
  return out;
}

json to_json(const std::vector<ApplicabilityJudgment>& js) {
  json arr = json::array();
  for (const auto& j : js) arr.push_back(to_json(j));
  return arr;
}

std::vector<ApplicabilityJudgment> judgments_from_json(const json& arr) {
  std::vector<ApplicabilityJudgment> out;
  for (const auto& j : arr) out.push_back(judgment_from_json(j));
  return out;
}

// ---------------------------------------------------------------------------
// Prompt construction

namespace {

constexpr std::string_view kTaskInstructions =
    "You are a regulatory affairs assistant for medical devices. For each candidate "
    "standard listed below, decide whether it is Mandatory, Recommended, or Not "
    "Applicable for the described device, in the jurisdiction given by the "
    "standard's Region field. Give a short plain-English justification and cite the "
    "specific clause where possible.";

constexpr std::string_view kCueWordRules =
    "Cue-word rules:\n"
    "- If the standard's requirements use \"shall\" or \"must\" and its scope covers "
    "the device, classify it as Mandatory.\n"
    "- If the standard uses \"should\" and its scope covers the device, classify it "
    "as Recommended.\n"
    "- If the scope does not cover the device, classify it as Not Applicable.";

constexpr std::string_view kRequiredKeys =
    "standard_id, applicability, justification, clause";

std::string region_line(const std::vector<PromptCandidate>& candidates, RegionMode mode) {
  std::set<std::string> regions;
  for (const auto& c : candidates) regions.insert(std::string(to_string(c.record.region)));
  std::string joined;
  for (const auto& r : regions) joined += (joined.empty() ? "" : ", ") + r;
  if (mode == RegionMode::Single) {
    return "Region mode: SINGLE. Judge every candidate under " + joined + " regulations.";
  }
  return "Region mode: CROSS. Candidates come from " + joined +
         "; judge each one under its own jurisdiction only.";
}

}  // namespace

std::vector<FewShotExample> load_few_shot(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, "few-shot file " + path.string() +
                                            " is not valid JSON: " + e.what());
  }
  std::vector<FewShotExample> out;
  for (const auto& e : j.at("examples")) {
    out.push_back({e.at("device").get<std::string>(), e.at("standard").get<std::string>(),
                   e.at("output")});
  }
  return out;
}

json to_json(const ChatRequest& r) {
  json messages = json::array();
  for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json j = {{"messages", messages}, {"temperature", r.temperature}};
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

std::string PromptBundle::render() const {
  std::string out = instructions;
  out += "\n\n";
  out += region_line(candidates, mode);
  out += "\n\nDevice description:\n";
  out += device_text;
  out += "\n\nCandidate standards:\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& r = candidates[i].record;
    out += "[" + std::to_string(i + 1) + "] ID: " + r.id + "\n";
    out += "Region: " + std::string(to_string(r.region)) + "\n";
    out += "Clause: " + (r.clause && !r.clause->empty() ? *r.clause : std::string("(none)")) +
           "\n";
    out += "Text:\n" + compose_segment_text(r, language) + "\n\n";
  }
  out += "Examples:\n";
  for (std::size_t i = 0; i < few_shot.size(); ++i) {
    out += few_shot[i];
    out += "\n\n";
  }
  out += "Respond with a JSON array only, one object per candidate standard, using "
         "exactly these keys: ";
  out += kRequiredKeys;
  return out;
}

ChatRequest PromptBundle::request() const {
  ChatRequest r;
  r.messages.push_back({"system", "You classify medical device standards and reply in JSON."});
  r.messages.push_back({"user", render()});
  r.temperature = temperature;
  return r;
}

PromptBundle build_prompt(std::string_view device_text,
                          std::vector<PromptCandidate> candidates, RegionMode mode,
                          const PromptOptions& options) {
  if (text::trim(device_text).empty()) {
    throw Error(ErrorCode::InvalidInput, "device description is empty");
  }
  if (candidates.empty() || candidates.size() > options.max_candidates) {
    throw Error(ErrorCode::InvalidInput,
                "prompt needs between 1 and " + std::to_string(options.max_candidates) +
                    " candidates, got " + std::to_string(candidates.size()));
  }
  if (options.few_shot.size() < 2) {
    throw Error(ErrorCode::ConfigError, "at least two few-shot examples are required");
  }
  PromptBundle b;
  b.device_text = text::trim(device_text);
  b.candidates = std::move(candidates);
  b.mode = mode;
  b.instructions = std::string(kTaskInstructions) + "\n\n" + std::string(kCueWordRules);
  b.temperature = options.temperature;
  b.language = options.language;
  for (std::size_t i = 0; i < options.few_shot.size(); ++i) {
    const auto& ex = options.few_shot[i];
    b.few_shot.push_back("Example " + std::to_string(i + 1) + " (device: " + ex.device +
                         "; standard: " + ex.standard + "):\n" + ex.output.dump(2));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Providers

ScriptedChatProvider::ScriptedChatProvider(std::vector<Rule> rules,
                                           std::optional<std::string> default_response,
                                           std::string model_id)
    : rules_(std::move(rules)),
      default_response_(std::move(default_response)),
      model_id_(std::move(model_id)) {}

std::unique_ptr<ScriptedChatProvider> ScriptedChatProvider::from_json(const json& j) {
  std::vector<Rule> rules;
  for (const auto& r : j.value("rules", json::array())) {
    Rule rule;
    rule.when_contains = r.value("when_contains", std::vector<std::string>{});
    if (r.contains("response_json")) {
      rule.response = r["response_json"].dump(2);
    } else {
      rule.response = r.at("response").get<std::string>();
    }
    rules.push_back(std::move(rule));
  }
  std::optional<std::string> fallback;
  if (j.contains("default_response_json")) {
    fallback = j["default_response_json"].dump(2);
  } else if (j.contains("default_response") && j["default_response"].is_string()) {
    fallback = j["default_response"].get<std::string>();
  }
  auto p = std::make_unique<ScriptedChatProvider>(std::move(rules), fallback,
                                                  j.value("model_id", "scripted-mock"));
  p->fail_next(j.value("fail_first", 0));
  p->fail_always(j.value("always_fail", false));
  const auto mode = j.value("fallback", std::string("default"));
  if (mode != "default" && mode != "cueword") {
    throw Error(ErrorCode::ConfigError, "chat script fallback must be 'default' or 'cueword'");
  }
  p->cueword_fallback(mode == "cueword");
  return p;
}

std::unique_ptr<ScriptedChatProvider> ScriptedChatProvider::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError,
                "cannot load chat script " + path.string() + ": " + e.what());
  }
}

std::string ScriptedChatProvider::complete(const ChatRequest& request) {
  ++calls_;
  if (timeout_always_) throw TimeoutError("scripted provider timed out");
  if (fail_always_) throw ProviderError("scripted provider is down", true);
  if (fail_remaining_ > 0) {
    --fail_remaining_;
    throw ProviderError("scripted transient failure", true);
  }
  std::string all;
  for (const auto& m : request.messages) {
    all += m.content;
    all.push_back('\n');
  }
  for (const auto& rule : rules_) {
    const bool match = std::all_of(
        rule.when_contains.begin(), rule.when_contains.end(),
        [&](const std::string& needle) { return all.find(needle) != std::string::npos; });
    if (match) return rule.response;
  }
  if (cueword_fallback_) {
    try {
      return CueWordChatProvider().complete(request);
    } catch (const ProviderError&) {
      // Not a candidate-list prompt; use the default response if there is one.
      if (!default_response_) throw;
    }
  }
  if (default_response_) return *default_response_;
  throw ProviderError("scripted provider has no rule for this prompt", false);
}

std::string CueWordChatProvider::complete(const ChatRequest& request) {
  const std::string prompt = request.messages.empty() ? "" : request.messages.back().content;
  const auto dev_start = prompt.find("Device description:\n");
  const auto cand_start = prompt.find("\n\nCandidate standards:\n");
  const auto ex_start = prompt.find("Examples:\n", cand_start == std::string::npos ? 0 : cand_start);
  if (dev_start == std::string::npos || cand_start == std::string::npos ||
      ex_start == std::string::npos) {
    throw ProviderError("prompt does not have the expected layout", false);
  }
  const auto device = prompt.substr(dev_start + 20, cand_start - dev_start - 20);
  static const std::set<std::string> kFunctionWords = {
      "with", "from", "that", "this", "used", "into", "have", "being", "their",
      "which", "under", "over", "such", "other", "when", "where", "also", "only"};
  std::set<std::string> device_words;
  for (auto& t : text::tokenize(device)) {
    if (t.size() >= 4 && !kFunctionWords.count(t)) device_words.insert(t);
  }

  const auto body_start = cand_start + std::string("\n\nCandidate standards:\n").size();
  const std::string body = prompt.substr(body_start, ex_start - body_start);

  json out = json::array();
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto end = body.find("\n\n", pos);
    if (end == std::string::npos) end = body.size();
    const std::string block = body.substr(pos, end - pos);
    pos = end + 2;
    const auto id_at = block.find("ID: ");
    if (id_at == std::string::npos) continue;
    auto line_end = [&](std::size_t from) {
      auto e = block.find('\n', from);
      return e == std::string::npos ? block.size() : e;
    };
    const std::string id = block.substr(id_at + 4, line_end(id_at) - id_at - 4);
    std::string region, clause;
    if (auto r = block.find("Region: "); r != std::string::npos) {
      region = block.substr(r + 8, line_end(r) - r - 8);
    }
    if (auto c = block.find("Clause: "); c != std::string::npos) {
      clause = block.substr(c + 8, line_end(c) - c - 8);
    }
    std::string scope;
    if (auto t = block.find("Text:\n"); t != std::string::npos) scope = block.substr(t + 6);

    std::size_t overlap = 0;
    std::set<std::string> scope_words;
    for (auto& t : text::tokenize(scope)) scope_words.insert(t);
    for (const auto& w : device_words) overlap += scope_words.count(w);

    std::string label = "Not Applicable";
    std::string why = "The scope shares little with the described device.";
    if (overlap >= min_overlap_) {
      if (scope_words.count("shall") || scope_words.count("must")) {
        label = "Mandatory";
        why = "The scope uses 'shall'/'must' and covers the described device.";
      } else if (scope_words.count("should")) {
        label = "Recommended";
        why = "The scope uses 'should' and covers the described device.";
      } else {
        label = "Recommended";
        why = "The scope covers the described device without mandatory wording.";
      }
    }
    out.push_back({{"standard_id", id},
                   {"applicability", label},
                   {"justification", why},
                   {"clause", clause == "(none)" || clause.empty() ? json(nullptr) : json(clause)},
                   {"region", region}});
  }
  return out.dump(2);
}

HttpChatProvider::HttpChatProvider(HttpChatOptions options) : options_(std::move(options)) {
  if (options_.url.empty()) {
    throw Error(ErrorCode::ConfigError,
                "remote chat provider needs an endpoint (REGJUDGE_LLM_URL)");
  }
}

HttpChatOptions HttpChatProvider::options_from_env(HttpChatOptions base) {
  if (const char* v = std::getenv("REGJUDGE_LLM_URL")) base.url = v;
  if (const char* v = std::getenv("REGJUDGE_LLM_MODEL")) base.model = v;
  if (const char* v = std::getenv("REGJUDGE_LLM_KEY")) base.api_key = v;
  return base;
}

std::string HttpChatProvider::complete(const ChatRequest& request) {
  json body = to_json(request);
  body["model"] = options_.model;
  if (options_.seed && !request.seed) body["seed"] = *options_.seed;
  std::vector<HttpHeader> headers;
  if (!options_.api_key.empty()) {
    headers.push_back({"Authorization", "Bearer " + options_.api_key});
  }
  const auto res = http_post_json(options_.url, body.dump(), headers, options_.timeout);
  if (res.status != 200) {
    throw ProviderError("chat endpoint returned HTTP " + std::to_string(res.status),
                        retryable_status(res.status));
  }
  try {
    const auto parsed = json::parse(res.body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed chat response: ") + e.what(), false);
  }
}

// ---------------------------------------------------------------------------
// Classification

json to_json(const Transcript& t) {
  return {{"request", t.request},
          {"response", t.response},
          {"attempts", t.attempts},
          {"errors", t.errors}};
}

Transcript transcript_from_json(const json& j) {
  Transcript t;
  t.request = j.at("request");
  t.response = j.at("response").get<std::string>();
  t.attempts = j.value("attempts", 1);
  t.errors = j.value("errors", std::vector<std::string>{});
  return t;
}

ClassifyResult classify(ChatProvider& provider, const ChatRequest& request,
                        const ClassifyOptions& options) {
  ClassifyResult result;
  result.transcript.request = to_json(request);
  result.transcript.request["model"] = provider.model_id();
  spdlog::debug("chat request to {}: {}", provider.model_id(),
                redact(result.transcript.request.dump(), options.secrets));

  const int max_attempts = std::max(1, options.max_retries + 1);
  for (int attempt = 1;; ++attempt) {
    result.attempts = attempt;
    result.transcript.attempts = attempt;
    try {
      result.content = provider.complete(request);
      result.transcript.response = result.content;
      spdlog::debug("chat response after {} attempt(s): {}", attempt,
                    redact(result.content, options.secrets));
      return result;
    } catch (const ProviderError& e) {
      result.transcript.errors.push_back(redact(e.what(), options.secrets));
      if (!e.retryable()) throw;
      if (attempt >= max_attempts) {
        throw ProviderError("chat provider failed after " + std::to_string(attempt) +
                                " attempts: " + redact(e.what(), options.secrets),
                            true);
      }
    } catch (const TimeoutError& e) {
      result.transcript.errors.push_back(redact(e.what(), options.secrets));
      if (attempt >= max_attempts) {
        throw TimeoutError("chat provider timed out after " + std::to_string(attempt) +
                           " attempts");
      }
    }
    spdlog::warn("chat attempt {} failed: {}", attempt,
                 result.transcript.errors.back());
  }
}

ClassifyResult classify(ChatProvider& provider, const PromptBundle& bundle,
                        const ClassifyOptions& options) {
  return classify(provider, bundle.request(), options);
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::string strip_code_fences(std::string_view raw) {
  std::string out;
  std::istringstream in{std::string(raw)};
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).rfind("```", 0) == 0) continue;
    out += line;
    out.push_back('\n');
  }
  return out;
}

std::optional<json> try_parse_array(std::string_view s) {
  try {
    auto j = json::parse(s);
    if (j.is_array()) return j;
  } catch (const json::parse_error&) {
  }
  return std::nullopt;
}

std::string require_string(const json& obj, const char* key, std::string_view raw) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw MalformedOutput(std::string("judgment is missing string key '") + key + "'",
                          std::string(raw));
  }
  return it->get<std::string>();
}

}  // namespace

ParseResult parse_judgments(std::string_view raw,
                            std::span<const PromptCandidate> candidates,
                            const ParseOptions& options) {
  ParseResult result;
  auto parsed = try_parse_array(raw);
  if (!parsed) {
    const auto unfenced = strip_code_fences(raw);
    const auto open = unfenced.find('[');
    const auto close = unfenced.rfind(']');
    if (open != std::string::npos && close != std::string::npos && close > open) {
      parsed = try_parse_array(std::string_view(unfenced).substr(open, close - open + 1));
    }
    result.repaired = true;
  }
  if (!parsed) {
    throw MalformedOutput("provider output is not a JSON array", std::string(raw));
  }
  if (parsed->empty()) throw Error(ErrorCode::NoJudgments, "provider returned no judgments");

  std::size_t limit = parsed->size();
  if (options.max_judgments && *options.max_judgments < limit) {
    result.truncated = limit - *options.max_judgments;
    limit = *options.max_judgments;
  }

  std::set<std::pair<std::string, Region>> seen;
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& obj = (*parsed)[i];
    if (!obj.is_object()) {
      throw MalformedOutput("judgment " + std::to_string(i) + " is not an object",
                            std::string(raw));
    }
    ApplicabilityJudgment j;
    j.standard_id = text::trim(require_string(obj, "standard_id", raw));
    const auto label = parse_applicability(require_string(obj, "applicability", raw));
    if (!label) {
      throw MalformedOutput("label '" + obj["applicability"].get<std::string>() +
                                "' is not one of Mandatory, Recommended, Not Applicable",
                            std::string(raw));
    }
    j.applicability = *label;
    j.justification = require_string(obj, "justification", raw);
    if (!obj.contains("clause")) {
      throw MalformedOutput("judgment is missing key 'clause'", std::string(raw));
    }
    if (obj["clause"].is_string()) j.clause = obj["clause"].get<std::string>();
    if (obj.contains("name") && obj["name"].is_string()) j.name = obj["name"].get<std::string>();

    try {
      j.norm_id = normalize_standard_id(j.standard_id);
    } catch (const Error&) {
      ++result.dropped_unknown;
      continue;
    }
    const PromptCandidate* match = nullptr;
    for (const auto& c : candidates) {
      if (c.record.norm_id == j.norm_id) {
        match = &c;
        break;
      }
    }
    if (!match) {
      ++result.dropped_unknown;
      continue;
    }
    std::optional<Region> stated;
    if (obj.contains("region") && obj["region"].is_string()) {
      stated = parse_region(obj["region"].get<std::string>());
    }
    j.region = stated.value_or(match->record.region);
    j.provenance = Provenance::LLM;
    if (!seen.insert({j.norm_id, j.region}).second) {
      ++result.dropped_duplicate;
      continue;
    }
    result.judgments.push_back(std::move(j));
  }
  return result;
}

EnrichResult enrich_judgments(std::vector<ApplicabilityJudgment> judgments,
                              std::span<const PromptCandidate> candidates,
                              const Corpus& corpus) {
  EnrichResult result;
  for (auto& j : judgments) {
    if (j.norm_id.empty()) {
      try {
        j.norm_id = normalize_standard_id(j.standard_id);
      } catch (const Error&) {
        ++result.dropped;
        continue;
      }
    }
    // Candidate regions for this id, then the whole corpus as a fallback.
    std::vector<Region> regions;
    for (const auto& c : candidates) {
      if (c.record.norm_id == j.norm_id) regions.push_back(c.record.region);
    }
    if (regions.empty()) {
      for (const auto* r : corpus.find_all(j.norm_id)) regions.push_back(r->region);
    }
    std::optional<Region> chosen;
    if (std::find(regions.begin(), regions.end(), j.region) != regions.end()) {
      chosen = j.region;
    } else if (regions.size() == 1) {
      chosen = regions.front();
    }
    const StandardRecord* record = chosen ? corpus.find(j.norm_id, *chosen) : nullptr;
    if (!record) {
      spdlog::warn("dropping judgment for {}: not resolvable in the corpus", j.standard_id);
      ++result.dropped;
      continue;
    }
    j.standard_id = record->id;
    j.name = record->name();
    j.region = record->region;
    j.clause = record->clause;
    result.judgments.push_back(std::move(j));
  }
  return result;
}

namespace {

ParseResult parse_allowing_empty(std::string_view raw, std::span<const PromptCandidate> candidates,
                                 const ParseOptions& options) {
  try {
    return parse_judgments(raw, candidates, options);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoJudgments) throw;
    ParseResult empty;
    empty.no_judgments = true;
    return empty;
  }
}

}  // namespace

ParseResult parse_transcripts(std::span<const Transcript> transcripts,
                              std::span<const PromptCandidate> candidates,
                              const ParseOptions& parse_options) {
  if (transcripts.empty()) throw Error(ErrorCode::ReplayError, "no transcripts to parse");
  for (std::size_t i = 0;; ++i) {
    try {
      return parse_allowing_empty(transcripts[i].response, candidates, parse_options);
    } catch (const MalformedOutput&) {
      if (i + 1 == transcripts.size()) throw;
    }
  }
}

void classify_and_parse(ChatProvider& provider, const PromptBundle& bundle,
                        ReasoningOutcome& outcome, const ClassifyOptions& classify_options,
                        const ParseOptions& parse_options) {
  auto request = bundle.request();
  auto first = classify(provider, request, classify_options);
  outcome.transcripts.push_back(first.transcript);
  try {
    outcome.parsed = parse_allowing_empty(first.content, bundle.candidates, parse_options);
    return;
  } catch (const MalformedOutput& e) {
    spdlog::warn("provider output malformed ({}); asking once more for plain JSON", e.what());
  }
  request.messages.push_back({"assistant", first.content});
  request.messages.push_back({"user", std::string(kJsonOnlyReminder)});
  auto second = classify(provider, request, classify_options);
  outcome.transcripts.push_back(second.transcript);
  outcome.parsed = parse_allowing_empty(second.content, bundle.candidates, parse_options);
}

}  // namespace regjudge
