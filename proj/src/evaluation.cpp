#include "regjudge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV and benchmark loading

std::vector<CsvRow> parse_csv(std::string_view content) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  row.line = 1;

  auto end_field = [&] {
    row.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    const bool blank = row.fields.size() == 1 && row.fields[0].empty();
    if (!blank) rows.push_back(std::move(row));
    row = CsvRow{};
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      end_row();
      ++line;
      row.line = line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", row.line);
  if (field_started || !field.empty() || !row.fields.empty()) end_row();
  return rows;
}

std::vector<BenchmarkSample> parse_benchmark(std::string_view csv) {
  // A UTF-8 byte order mark is common in spreadsheet exports.
  if (csv.substr(0, 3) == "\xEF\xBB\xBF") csv.remove_prefix(3);
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw Error(ErrorCode::EmptyBenchmark, "benchmark file is empty");

  static const std::vector<std::string> expected = {"device_id", "description", "standard_id",
                                                    "applicability", "justification"};
  std::vector<std::string> header;
  for (const auto& f : rows[0].fields) header.push_back(text::to_lower_ascii(text::trim(f)));
  if (header != expected) {
    throw ParseError(
        "benchmark header must be device_id,description,standard_id,applicability,justification",
        rows[0].line);
  }
  if (rows.size() == 1) throw Error(ErrorCode::EmptyBenchmark, "benchmark has no data rows");

  std::vector<BenchmarkSample> samples;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != expected.size()) {
      throw ParseError("expected 5 fields, found " + std::to_string(r.fields.size()), r.line);
    }
    const auto device_id = text::trim(r.fields[0]);
    if (device_id.empty()) throw ParseError("empty device_id", r.line);
    const auto label = parse_applicability(r.fields[3]);
    if (!label) throw ParseError("unknown applicability label '" + r.fields[3] + "'", r.line);
    GoldEntry gold;
    gold.standard_id = text::trim(r.fields[2]);
    try {
      gold.norm_id = normalize_standard_id(gold.standard_id);
    } catch (const Error& e) {
      throw ParseError(std::string("bad standard_id: ") + e.what(), r.line);
    }
    gold.applicability = *label;
    gold.justification = r.fields[4];

    auto [it, inserted] = index.emplace(device_id, samples.size());
    if (inserted) {
      const auto description = text::trim(r.fields[1]);
      if (description.empty()) throw ParseError("empty description", r.line);
      samples.push_back({device_id, description, {}});
    }
    samples[it->second].gold.push_back(std::move(gold));
  }
  return samples;
}

std::vector<BenchmarkSample> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_benchmark(ss.str());
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

bool gold_hit_within(const std::vector<RetrievalCandidate>& ranked, const BenchmarkSample& s,
                     std::size_t k) {
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& g : s.gold) {
      if (ranked[i].norm_id == g.norm_id) return true;
    }
  }
  return false;
}

const std::vector<ApplicabilityJudgment>* judgments_for(const DeviceJudgments& all,
                                                        const std::string& device_id) {
  auto it = all.find(device_id);
  return it == all.end() ? nullptr : &it->second;
}

// Number of gold entries whose first same-id judgment carries the gold label.
std::size_t correct_labels(const std::vector<ApplicabilityJudgment>* js,
                           const BenchmarkSample& s) {
  if (!js) return 0;
  std::size_t correct = 0;
  for (const auto& g : s.gold) {
    auto it = std::find_if(js->begin(), js->end(),
                           [&](const ApplicabilityJudgment& j) { return j.norm_id == g.norm_id; });
    if (it != js->end() && it->applicability == g.applicability) ++correct;
  }
  return correct;
}

bool any_exact_hit(const std::vector<ApplicabilityJudgment>* js, const BenchmarkSample& s) {
  if (!js) return false;
  for (const auto& j : *js) {
    for (const auto& g : s.gold) {
      if (j.norm_id == g.norm_id && j.applicability == g.applicability) return true;
    }
  }
  return false;
}

}  // namespace

double top_k_recall(const Predictions& predictions, std::span<const BenchmarkSample> samples,
                    std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidInput, "k must be at least 1");
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    auto it = predictions.find(s.device_id);
    if (it == predictions.end()) {
      spdlog::warn("no predictions for device {}; counted as a miss", s.device_id);
      continue;
    }
    if (gold_hit_within(it->second, s, k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double applicability_accuracy(const DeviceJudgments& judgments,
                              std::span<const BenchmarkSample> samples) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    total += s.gold.size();
    correct += correct_labels(judgments_for(judgments, s.device_id), s);
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

double sample_level_accuracy(const DeviceJudgments& judgments,
                             std::span<const BenchmarkSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (any_exact_hit(judgments_for(judgments, s.device_id), s)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

MetricsReport evaluate(std::string system, const Predictions& predictions,
                       const DeviceJudgments& judgments,
                       std::span<const BenchmarkSample> samples, std::size_t k) {
  MetricsReport r;
  r.system = std::move(system);
  r.k = k;
  r.n_samples = samples.size();
  r.top1_recall = top_k_recall(predictions, samples, 1);
  r.topk_recall = top_k_recall(predictions, samples, k);
  r.applicability_accuracy = applicability_accuracy(judgments, samples);
  r.sample_level_accuracy = sample_level_accuracy(judgments, samples);
  for (const auto& s : samples) {
    SampleOutcome o;
    o.device_id = s.device_id;
    if (auto it = predictions.find(s.device_id); it != predictions.end()) {
      o.top1_hit = gold_hit_within(it->second, s, 1);
      o.topk_hit = gold_hit_within(it->second, s, k);
    }
    const auto* js = judgments_for(judgments, s.device_id);
    o.gold = s.gold.size();
    o.correct = correct_labels(js, s);
    o.sample_hit = any_exact_hit(js, s);
    r.per_sample.push_back(std::move(o));
  }
  return r;
}

json to_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& o : r.per_sample) {
    per.push_back({{"device_id", o.device_id},
                   {"top1_hit", o.top1_hit},
                   {"topk_hit", o.topk_hit},
                   {"gold", o.gold},
                   {"correct", o.correct},
                   {"sample_hit", o.sample_hit}});
  }
  return {{"system", r.system},
          {"k", r.k},
          {"top1_recall", r.top1_recall},
          {"topk_recall", r.topk_recall},
          {"applicability_accuracy", r.applicability_accuracy},
          {"sample_level_accuracy", r.sample_level_accuracy},
          {"n_samples", r.n_samples},
          {"per_sample", per}};
}

std::string markdown_table(std::span<const MetricsReport> reports) {
  const std::size_t k = reports.empty() ? 5 : reports.front().k;
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "| Model | Top-1 Recall | Top-" << k
      << " Recall | Applicability Accuracy | Sample-level Accuracy |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    out << "| " << r.system << " | " << r.top1_recall << " | " << r.topk_recall << " | "
        << r.applicability_accuracy << " | " << r.sample_level_accuracy << " |\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Student's t

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw Error(ErrorCode::InvalidInput, "beta parameters must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (df <= 0.0) throw Error(ErrorCode::InvalidInput, "degrees of freedom must be > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::InvalidInput, "paired samples differ in length");
  }
  const std::size_t n = a.size();
  if (n < 2) throw Error(ErrorCode::InvalidInput, "paired t-test needs at least two pairs");
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.n = n;
  if (sd == 0.0) {
    r.degenerate = true;
    return r;
  }
  r.t_value = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(n - 1);
  // Two-sided p is the full incomplete-beta tail, which avoids 1 - cdf cancellation.
  r.p_value = std::clamp(incomplete_beta(df / 2.0, 0.5, df / (df + r.t_value * r.t_value)),
                         0.0, 1.0);
  return r;
}

json to_json(const TTestResult& t) {
  return {{"t_value", t.t_value},
          {"p_value", t.p_value},
          {"n", t.n},
          {"degenerate", t.degenerate}};
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

ApplicabilityJudgment baseline_judgment(const StandardRecord& r, Applicability label,
                                        std::string justification) {
  ApplicabilityJudgment j;
  j.standard_id = r.id;
  j.norm_id = r.norm_id;
  j.name = r.name();
  j.applicability = label;
  j.justification = std::move(justification);
  j.clause = r.clause;
  j.region = r.region;
  return j;
}

}  // namespace

BaselineOutput baseline_retrieval_only(const Corpus& corpus, const VectorIndex& index,
                                       Encoder& encoder,
                                       std::span<const BenchmarkSample> samples, std::size_t k,
                                       Applicability label) {
  BaselineOutput out;
  for (const auto& s : samples) {
    const auto query = encoder.embed_text(s.description);
    auto ranked = search_top_k(index, query, k);
    auto& js = out.judgments[s.device_id];
    for (const auto& c : ranked) {
      if (const auto* r = corpus.find(c.norm_id, c.region)) {
        js.push_back(baseline_judgment(*r, label, "retrieval-only baseline: default label"));
      }
    }
    out.predictions[s.device_id] = std::move(ranked);
  }
  return out;
}

std::vector<RetrievalCandidate> rank_by_token_overlap(const Corpus& corpus,
                                                      std::string_view description,
                                                      std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidInput, "k must be at least 1");
  const auto query_tokens = text::tokenize(description);
  const std::set<std::string> query(query_tokens.begin(), query_tokens.end());
  std::vector<RetrievalCandidate> all;
  all.reserve(corpus.size());
  for (const auto& r : corpus.records()) {
    const auto tokens = text::tokenize(record_search_text(r));
    const std::set<std::string> record(tokens.begin(), tokens.end());
    std::size_t overlap = 0;
    for (const auto& t : query) overlap += record.count(t);
    RetrievalCandidate c;
    c.norm_id = r.norm_id;
    c.region = r.region;
    c.keyword_score = static_cast<double>(overlap);
    c.final_score = c.keyword_score;
    all.push_back(std::move(c));
  }
  sort_and_rank(all);
  if (all.size() > k) all.resize(k);
  return all;
}

BaselineOutput baseline_rule_based(const Corpus& corpus,
                                   std::span<const BenchmarkSample> samples, std::size_t k,
                                   Applicability label) {
  BaselineOutput out;
  for (const auto& s : samples) {
    auto ranked = rank_by_token_overlap(corpus, s.description, k);
    auto& js = out.judgments[s.device_id];
    for (const auto& c : ranked) {
      if (const auto* r = corpus.find(c.norm_id, c.region)) {
        js.push_back(baseline_judgment(*r, label, "rule-based baseline: default label"));
      }
    }
    out.predictions[s.device_id] = std::move(ranked);
  }
  return out;
}

ChatRequest zero_shot_request(std::string_view description, const Corpus& corpus) {
  std::string prompt =
      "Identify up to three regulatory standards that apply to the medical device below and "
      "classify each as Mandatory, Recommended, or Not Applicable. Only use IDs from the "
      "allowed list.\n\nDevice description:\n";
  prompt += text::trim(description);
  prompt += "\n\nAllowed standard IDs:\n";
  for (const auto& r : corpus.records()) {
    prompt += "- " + r.id + " (" + std::string(to_string(r.region)) + ")\n";
  }
  prompt += "\nRespond with a JSON array only, using exactly these keys: standard_id, "
            "applicability, justification, clause";
  ChatRequest req;
  req.messages.push_back({"system", "You classify medical device standards and reply in JSON."});
  req.messages.push_back({"user", prompt});
  return req;
}

ZeroShotOutput baseline_zero_shot(ChatProvider& provider, const Corpus& corpus,
                                  std::span<const BenchmarkSample> samples,
                                  const ClassifyOptions& options) {
  std::vector<PromptCandidate> allowed;
  allowed.reserve(corpus.size());
  for (const auto& r : corpus.records()) {
    RetrievalCandidate c;
    c.norm_id = r.norm_id;
    c.region = r.region;
    allowed.push_back({r, c});
  }
  ParseOptions parse_options;
  parse_options.max_judgments = 3;

  ZeroShotOutput out;
  for (const auto& s : samples) {
    const auto result = classify(provider, zero_shot_request(s.description, corpus), options);
    auto& js = out.judgments[s.device_id];
    try {
      auto parsed = parse_judgments(result.content, allowed, parse_options);
      out.dropped_unknown += parsed.dropped_unknown;
      out.truncated += parsed.truncated;
      js = enrich_judgments(std::move(parsed.judgments), allowed, corpus).judgments;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoJudgments && e.code() != ErrorCode::MalformedOutput) throw;
      spdlog::warn("zero-shot output for {} unusable: {}", s.device_id, e.what());
    }
  }
  return out;
}

std::vector<ApplicabilityJudgment> pseudo_label_fallback(std::string_view device_id,
                                                         std::span<const BenchmarkSample> samples,
                                                         const Corpus* corpus) {
  const auto it = std::find_if(samples.begin(), samples.end(),
                               [&](const BenchmarkSample& s) { return s.device_id == device_id; });
  if (it == samples.end()) {
    throw Error(ErrorCode::NotFound, "device " + std::string(device_id) + " is not in the gold table");
  }
  std::vector<ApplicabilityJudgment> out;
  for (const auto& g : it->gold) {
    ApplicabilityJudgment j;
    j.standard_id = g.standard_id;
    j.norm_id = g.norm_id;
    j.applicability = g.applicability;
    j.justification = g.justification;
    j.provenance = Provenance::PseudoLabel;
    if (corpus) {
      const auto matches = corpus->find_all(g.norm_id);
      if (!matches.empty()) {
        j.region = matches.front()->region;
        j.name = matches.front()->name();
        j.clause = matches.front()->clause;
      }
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace regjudge
