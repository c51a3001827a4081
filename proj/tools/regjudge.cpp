// regjudge command-line interface.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/evaluation.hpp"
#include "regjudge/io.hpp"
#include "regjudge/pipeline.hpp"
#include "regjudge/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace regjudge;

namespace {

constexpr int kExitError = 1;
constexpr int kExitReplayMismatch = 3;

struct Common {
  std::string config;
  std::string corpus;
  std::string index;
  std::string rules;
  std::string run_root;
  std::string chat;
};

RunConfig make_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults() : RunConfig::load(c.config);
  cfg.apply_env();
  if (!c.corpus.empty()) cfg.corpus_path = c.corpus;
  if (!c.index.empty()) cfg.index_path = c.index;
  if (!c.rules.empty()) cfg.rules_path = c.rules;
  if (!c.run_root.empty()) cfg.run_root = c.run_root;
  if (!c.chat.empty()) cfg.chat_provider = c.chat;
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--corpus", c.corpus, "Corpus JSON file");
  app->add_option("--index", c.index, "Prebuilt index (.rjx)");
  app->add_option("--rules", c.rules, "Advice rule file");
  app->add_option("--run-root", c.run_root, "Directory for run artifacts");
  app->add_option("--chat", c.chat, "Chat provider: scripted, cueword or http");
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    write_file_atomic(path, content);
  }
}

// Per-region candidate lists merged into one ranking.
std::vector<RetrievalCandidate> merged_candidates(const RunArtifact& a) {
  std::vector<RetrievalCandidate> all;
  for (const auto& [_, cands] : a.retrieval) all.insert(all.end(), cands.begin(), cands.end());
  sort_and_rank(all);
  return all;
}

// Judged standards, in judgment order, as a ranked candidate list.
Predictions candidates_from_judgments(const DeviceJudgments& judgments) {
  Predictions out;
  for (const auto& [device, js] : judgments) {
    auto& list = out[device];
    for (const auto& j : js) {
      RetrievalCandidate c;
      c.norm_id = j.norm_id;
      c.region = j.region;
      c.rank = static_cast<int>(list.size() + 1);
      list.push_back(c);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("regjudge"));
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"Regulatory standard applicability engine for medical devices"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->capture_default_str();

  Common common;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and normalize a corpus file");
  std::string ingest_in, ingest_out, ingest_rejects;
  ingest->add_option("corpus", ingest_in, "Corpus JSON")->required();
  ingest->add_option("--out", ingest_out, "Write the normalized corpus here");
  ingest->add_option("--rejects", ingest_rejects, "Write rejected records here");

  // index build
  auto* index_cmd = app.add_subcommand("index", "Index management");
  index_cmd->require_subcommand(1);
  auto* index_build = index_cmd->add_subcommand("build", "Embed a corpus into an index file");
  std::string index_out;
  std::size_t index_dim = 64;
  std::string index_regions;
  bool exclude_repealed = false;
  add_common(index_build, common);
  index_build->add_option("--out", index_out, "Index path (.rjx)")->required();
  index_build->add_option("--dimension", index_dim, "Hashing embedding dimension")
      ->capture_default_str();
  index_build->add_option("--region", index_regions, "Restrict to regions, e.g. CN,US");
  index_build->add_flag("--exclude-repealed", exclude_repealed, "Leave repealed standards out");

  // judge
  auto* judge = app.add_subcommand("judge", "Judge one device description");
  std::string description, judge_regions, matrix_out, csv_out, artifact_out;
  std::size_t judge_k = 0;
  add_common(judge, common);
  judge->add_option("description", description, "Free-text device description")->required();
  judge->add_option("--region", judge_regions, "CN, US or CN,US");
  judge->add_option("--k", judge_k, "Candidates per region");
  judge->add_option("--matrix-out", matrix_out, "Write the compliance matrix here ('-' = stdout)");
  judge->add_option("--csv-out", csv_out, "Write the flat CSV matrix here");
  judge->add_option("--artifact-out", artifact_out, "Write the full run artifact here");

  // compare
  auto* compare = app.add_subcommand("compare", "Print the matrix of a stored run");
  std::string compare_id;
  bool compare_csv = false;
  add_common(compare, common);
  compare->add_option("id", compare_id, "Artifact id")->required();
  compare->add_flag("--csv", compare_csv, "Print the flat CSV form");

  // replay
  auto* replay = app.add_subcommand("replay", "Recompute a stored run from its transcripts");
  std::string replay_id;
  add_common(replay, common);
  replay->add_option("id", replay_id, "Artifact id")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  std::string host = "127.0.0.1";
  int port = 8080;
  add_common(serve, common);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a system on a benchmark CSV");
  std::string benchmark, system = "rag", eval_out, eval_md, compare_to;
  std::size_t eval_k = 5;
  add_common(eval, common);
  eval->add_option("--benchmark", benchmark, "Benchmark CSV")->required();
  eval->add_option("--system", system, "rag, retrieval, rule, zeroshot or pseudo")
      ->check(CLI::IsMember({"rag", "retrieval", "rule", "zeroshot", "pseudo"}))
      ->capture_default_str();
  eval->add_option("--k", eval_k, "Cutoff for top-k recall")->capture_default_str();
  eval->add_option("--out", eval_out, "Report JSON ('-' = stdout)");
  eval->add_option("--md", eval_md, "Markdown table output");
  eval->add_option("--compare-to", compare_to,
                   "Earlier report JSON; adds a paired t-test on per-device accuracy");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (ingest->parsed()) {
      auto loaded = load_corpus(ingest_in);
      json summary = {{"records", loaded.corpus.size()},
                      {"rejected", loaded.rejects.size()},
                      {"content_hash", loaded.corpus.content_hash()}};
      std::cout << summary.dump(2) << "\n";
      if (!ingest_out.empty()) write_file_atomic(ingest_out, loaded.corpus.to_json().dump(2) + "\n");
      if (!ingest_rejects.empty()) {
        write_file_atomic(ingest_rejects, to_json(loaded.rejects).dump(2) + "\n");
      }
      return 0;
    }

    if (index_build->parsed()) {
      auto cfg = make_config(common);
      auto loaded = load_corpus(cfg.corpus_path.string());
      Encoder encoder(std::make_shared<HashingEmbeddingProvider>(index_dim),
                      cfg.cache_dir.empty() ? nullptr
                                            : std::make_shared<EmbeddingCache>(cfg.cache_dir));
      IndexFilter filter;
      if (!index_regions.empty()) filter.regions = parse_regions(index_regions);
      filter.exclude_repealed = exclude_repealed;
      const auto index = build_index(loaded.corpus, encoder, filter, cfg.language);
      index.save(index_out);
      std::cout << json{{"entries", index.size()},
                        {"model_id", index.model_id()},
                        {"content_hash", index.content_hash()}}
                       .dump(2)
                << "\n";
      return 0;
    }

    if (judge->parsed()) {
      auto engine = Engine::from_config(make_config(common));
      JudgeOptions options;
      if (!judge_regions.empty()) options.regions = parse_regions(judge_regions);
      if (judge_k) options.k = judge_k;
      const auto artifact = engine->judge(description, options);
      if (!artifact_out.empty()) write_output(artifact_out, to_json(artifact).dump(2) + "\n");
      if (!csv_out.empty()) write_output(csv_out, matrix_to_csv(artifact.matrix));
      write_output(matrix_out, serialize_matrix(artifact.matrix));
      std::cerr << "artifact " << artifact.id << " stored under "
                << engine->store().root().string() << "\n";
      return 0;
    }

    if (compare->parsed()) {
      auto cfg = make_config(common);
      ArtifactStore store(cfg.run_root);
      const auto artifact = store.load(compare_id, true);
      std::cout << (compare_csv ? matrix_to_csv(artifact.matrix) : serialize_matrix(artifact.matrix));
      return 0;
    }

    if (replay->parsed()) {
      auto engine = Engine::from_config(make_config(common));
      const auto report = engine->replay(replay_id);
      std::cout << to_json(report).dump(2) << "\n";
      return report.equal && report.integrity_ok ? 0 : kExitReplayMismatch;
    }

    if (serve->parsed()) {
      auto engine = Engine::from_config(make_config(common));
      ApiOptions options;
      if (const char* key = std::getenv("REGJUDGE_API_KEY")) options.api_key = key;
      Api api(*engine, options);
      HttpServer server(api);
      const int bound = server.bind(host, port);
      spdlog::set_level(spdlog::level::info);
      spdlog::info("serving on http://{}:{}", host, bound);
      server.listen();
      return 0;
    }

    if (eval->parsed()) {
      const auto samples = load_benchmark(benchmark);
      auto engine = Engine::from_config(make_config(common));
      Predictions predictions;
      DeviceJudgments judgments;
      if (system == "rag") {
        for (const auto& s : samples) {
          const auto artifact = engine->judge(s.description, JudgeOptions{std::nullopt, eval_k});
          predictions[s.device_id] = merged_candidates(artifact);
          judgments[s.device_id] = artifact.judgments;
        }
      } else if (system == "retrieval") {
        auto out = baseline_retrieval_only(engine->corpus(), engine->index(), engine->encoder(),
                                           samples, eval_k);
        predictions = std::move(out.predictions);
        judgments = std::move(out.judgments);
      } else if (system == "rule") {
        auto out = baseline_rule_based(engine->corpus(), samples, eval_k);
        predictions = std::move(out.predictions);
        judgments = std::move(out.judgments);
      } else if (system == "zeroshot") {
        judgments = baseline_zero_shot(engine->chat(), engine->corpus(), samples).judgments;
        predictions = candidates_from_judgments(judgments);
      } else {
        // Gold standards are injected as the candidate list.
        for (const auto& s : samples) {
          judgments[s.device_id] = pseudo_label_fallback(s.device_id, samples, &engine->corpus());
        }
        predictions = candidates_from_judgments(judgments);
      }
      const auto report = evaluate(system, predictions, judgments, samples, eval_k);
      json out = to_json(report);
      if (!compare_to.empty()) {
        const auto other = json::parse(read_file(compare_to));
        std::map<std::string, double> theirs;
        for (const auto& o : other.at("per_sample")) {
          const double gold = o.at("gold").get<double>();
          theirs[o.at("device_id").get<std::string>()] = gold ? o.at("correct").get<double>() / gold : 0.0;
        }
        std::vector<double> a, b;
        for (const auto& o : report.per_sample) {
          auto it = theirs.find(o.device_id);
          if (it == theirs.end()) continue;
          a.push_back(o.accuracy());
          b.push_back(it->second);
        }
        out["comparison"] = {{"against", other.value("system", compare_to)},
                             {"t_test", to_json(paired_t_test(a, b))}};
      }
      write_output(eval_out, out.dump(2) + "\n");
      if (!eval_md.empty()) {
        write_output(eval_md, markdown_table(std::span<const MetricsReport>(&report, 1)));
      }
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "/" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitError;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
