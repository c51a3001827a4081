#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regjudge/corpus.hpp"
#include "regjudge/embedding.hpp"
#include "regjudge/reasoning.hpp"
#include "regjudge/retrieval.hpp"

namespace regjudge {

struct GoldEntry {
  std::string standard_id;
  std::string norm_id;
  Applicability applicability = Applicability::NotApplicable;
  std::string justification;
};

struct BenchmarkSample {
  std::string device_id;
  std::string description;
  std::vector<GoldEntry> gold;
};

// RFC 4180 records. Quoted fields may span lines. Each row carries the
// 1-based line it starts on.
struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<CsvRow> parse_csv(std::string_view content);

// Header: device_id,description,standard_id,applicability,justification.
// Rows are grouped by device_id in first-seen order. A bad label or id is a
// ParseError carrying the row's line; no data rows is Error{EmptyBenchmark}.
std::vector<BenchmarkSample> parse_benchmark(std::string_view csv);
std::vector<BenchmarkSample> load_benchmark(const std::filesystem::path& path);

// device_id -> ranked candidates / judgments.
using Predictions = std::map<std::string, std::vector<RetrievalCandidate>>;
using DeviceJudgments = std::map<std::string, std::vector<ApplicabilityJudgment>>;

// Fraction of samples with a gold norm_id among the first k candidates.
// Samples without predictions count as misses.
double top_k_recall(const Predictions& predictions, std::span<const BenchmarkSample> samples,
                    std::size_t k);
// Over all gold entries: the first judgment with the same norm_id has the same
// label. Gold entries without a judgment count as wrong.
double applicability_accuracy(const DeviceJudgments& judgments,
                              std::span<const BenchmarkSample> samples);
// Fraction of samples with at least one judgment matching a gold entry on
// both norm_id and label.
double sample_level_accuracy(const DeviceJudgments& judgments,
                             std::span<const BenchmarkSample> samples);

struct SampleOutcome {
  std::string device_id;
  bool top1_hit = false;
  bool topk_hit = false;
  std::size_t gold = 0;
  std::size_t correct = 0;
  bool sample_hit = false;

  double accuracy() const { return gold ? static_cast<double>(correct) / gold : 0.0; }
};

struct MetricsReport {
  std::string system;
  std::size_t k = 5;
  double top1_recall = 0.0;
  double topk_recall = 0.0;
  double applicability_accuracy = 0.0;
  double sample_level_accuracy = 0.0;
  std::size_t n_samples = 0;
  std::vector<SampleOutcome> per_sample;
};

MetricsReport evaluate(std::string system, const Predictions& predictions,
                       const DeviceJudgments& judgments,
                       std::span<const BenchmarkSample> samples, std::size_t k = 5);

nlohmann::json to_json(const MetricsReport& r);
// Model | Top-1 Recall | Top-k Recall | Applicability Accuracy | Sample-level Accuracy
std::string markdown_table(std::span<const MetricsReport> reports);

struct TTestResult {
  double t_value = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  bool degenerate = false;
};

nlohmann::json to_json(const TTestResult& t);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// Student's t cumulative distribution with `df` degrees of freedom.
double student_t_cdf(double t, double df);

// Paired two-sided test on d = a - b with n - 1 degrees of freedom. Zero
// variance in d returns t = 0, p = 1 and degenerate = true.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct BaselineOutput {
  Predictions predictions;
  DeviceJudgments judgments;
};

// Dense top-k per description. Every candidate is given `label`.
BaselineOutput baseline_retrieval_only(const Corpus& corpus, const VectorIndex& index,
                                       Encoder& encoder,
                                       std::span<const BenchmarkSample> samples, std::size_t k,
                                       Applicability label = Applicability::Recommended);

// Raw token-overlap count between description and record text, no synonyms
// and no id bonus; ties broken by norm_id then region.
std::vector<RetrievalCandidate> rank_by_token_overlap(const Corpus& corpus,
                                                      std::string_view description,
                                                      std::size_t k);

BaselineOutput baseline_rule_based(const Corpus& corpus,
                                   std::span<const BenchmarkSample> samples, std::size_t k,
                                   Applicability label = Applicability::Recommended);

struct ZeroShotOutput {
  DeviceJudgments judgments;
  std::size_t dropped_unknown = 0;
  std::size_t truncated = 0;
};

// Description plus the allowed id list, no retrieved context. At most three
// judgments per device; unknown ids are dropped.
ZeroShotOutput baseline_zero_shot(ChatProvider& provider, const Corpus& corpus,
                                  std::span<const BenchmarkSample> samples,
                                  const ClassifyOptions& options = {});

// The zero-shot prompt for one description; exposed for inspection.
ChatRequest zero_shot_request(std::string_view description, const Corpus& corpus);

// Copies the gold rows of one device into PseudoLabel judgments. The region
// comes from the corpus when the id is known there. Evaluation only.
std::vector<ApplicabilityJudgment> pseudo_label_fallback(
    std::string_view device_id, std::span<const BenchmarkSample> samples,
    const Corpus* corpus = nullptr);

}  // namespace regjudge
