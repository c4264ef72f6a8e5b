#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmaug/benchmark.hpp"
#include "lmaug/filter.hpp"
#include "lmaug/generation.hpp"
#include "lmaug/neural/model.hpp"
#include "lmaug/neural/train.hpp"

namespace lmaug::pipeline {

using Json = nlohmann::json;

struct NeuralStage {
  bool enabled = true;
  nn::TrainHyper hyper;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string work_dir = "work";

  // Either generate the two-domain benchmark or read the four files. The
  // benchmark seed follows `seed` unless set explicitly.
  std::optional<bench::BenchmarkConfig> benchmark;
  bool benchmark_seed_explicit = false;
  std::string general_path, train_path, dev_path, test_path;

  int bpe_merges = 500;
  std::size_t bpe_max_general_lines = 50000;  // 0 = all

  // When false only the baseline n-gram is built: the neural, generation,
  // filter and interpolation stages are skipped.
  bool augment = true;

  nn::TransformerConfig model;
  NeuralStage pretrain, finetune, scratch;

  std::vector<int> prefix_k{1, 2, 3, 4, 5, 6};
  std::size_t prefix_max_per_k = 1000;

  gen::GenerationConfig generation;
  std::vector<double> temperatures{1.0};
  // Extra arms: random subsets of the generated corpus of these sizes, each
  // filtered, modelled and interpolated on its own.
  std::vector<std::size_t> subsample_sizes;

  // Length bounds come from in-domain quantiles unless given explicitly.
  double filter_low = 0.01, filter_high = 0.99;
  std::optional<std::size_t> min_len, max_len;
  std::size_t max_oov_per_sentence = 0;
  std::vector<std::string> required_keywords, banned_keywords;
  std::size_t max_duplicates = filter::kUnlimited;

  int ngram_order = 4;
  std::vector<std::uint64_t> ngram_cutoffs{1, 1, 1, 1};
  // Corpora for the baseline n-gram: any of "train", "general".
  std::vector<std::string> baseline_corpora{"train"};

  double em_tol = 1e-5;
  int em_max_iters = 100;

  // Relative paths in a config file resolve against the file's directory.
  static PipelineConfig from_json(const Json& j, const std::string& base_dir = ".");
  static PipelineConfig load(const std::string& path);
  Json to_json() const;

  // Checks value ranges and that referenced input files exist.
  void validate() const;
};

// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct RunOptions {
  // Run stages up to and including this one (all when empty).
  std::string until;
  // Recompute these stages even when a finished artifact exists ("all" for every stage).
  std::vector<std::string> force;
  bool quiet = false;
  std::function<void(const std::string&)> log;
};

struct StageStatus {
  std::string name;
  std::string dir;
  bool skipped = false;   // reused from an earlier run
  bool disabled = false;  // not part of this configuration
  double seconds = 0.0;  // wall time of the run that produced the artifact
};

struct RunReport {
  std::vector<StageStatus> stages;
  Json results;  // the eval stage's report (null if eval did not run)
};

// Stage artifacts live in work_dir/<stage>-<hash>/, where the hash covers the
// stage's configuration and its upstream hashes; a stage whose directory is
// complete is skipped.
RunReport run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {});

// Recomputes every perplexity from the stored artifacts of completed stages.
// Sections whose artifacts are missing are left out; throws, listing the
// required artifacts, when not even the baseline n-gram exists.
Json eval_report(const PipelineConfig& cfg);

// Directory of a stage under the configuration's work dir.
std::string stage_dir(const PipelineConfig& cfg, const std::string& stage);

// Human-readable summary of an eval report.
std::string format_report(const Json& report);

}  // namespace lmaug::pipeline
