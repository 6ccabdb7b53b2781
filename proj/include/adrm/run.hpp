#pragma once

// Run directories: training, evaluation and analysis pipelines that persist
// their artifacts plus a manifest with per-phase status and checksums.
//
// Layout of a run directory:
//   config.json                normalized config, written before training
//   manifest.json              digests, timestamps, phase status, checksums
//   accuracy_matrix.csv        rewritten after every task
//   metrics.csv                one row per optimizer step
//   diversifier.csv            adrm only, one row per diversified step
//   checkpoints/task_NNN.ckpt  state after each task; final.ckpt at the end
//   eval/corruption_sweep.csv, eval/adversarial_sweep.csv

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adrm/config.hpp"
#include "adrm/io.hpp"

namespace adrm {

std::string framework_version();

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "ADRM_OUTPUT_ROOT";

using LogFn = std::function<void(const std::string&)>;

struct TrainOptions {
  std::optional<fs::path> run_dir;  // overrides output.root / run_name
  bool resume = false;              // continue from the newest task checkpoint
  LogFn log;
};

/// Directory a normalized config trains into: output.root (or $ADRM_OUTPUT_ROOT,
/// or ./runs) joined with output.run_name (or "<name>-<digest prefix>").
fs::path default_run_dir(const Json& normalized);

/// Normalizes `doc`, snapshots it into the run directory and trains the whole
/// stream. On failure the manifest records the failed phase (and step) before
/// the error propagates.
fs::path cmd_train(const Json& doc, const TrainOptions& options = {});

struct EvalOptions {
  std::vector<std::string> overrides;  // "evaluation.attacks.epsilons=[0]" etc.
  bool corruptions = true;
  bool attacks = true;
  std::string model_id;  // defaults to the run directory name
  LogFn log;
};

struct EvalTables {
  std::vector<CorruptionRow> corruption;
  std::vector<AttackRow> attack;
};

/// Evaluates final.ckpt of a run. Throws artifact-not-found when it is missing.
EvalTables cmd_eval(const fs::path& run_dir, const EvalOptions& options = {});

struct AnalyzeOptions {
  fs::path out_dir;
  std::optional<std::uint64_t> subset_seed;  // defaults to the first run's evaluation seed
  std::optional<std::size_t> subset_size;
  std::optional<CkaKind> kind;
  LogFn log;
};

/// Pairs features of every run on one shared subset of the test split and
/// writes cka_matrix.csv plus features/<model_id>.npy. The same directory
/// listed twice is analyzed once. Runs must share a dataset digest.
SimilarityMatrix cmd_analyze(const std::vector<fs::path>& run_dirs, const AnalyzeOptions& options);

/// Problems found in a run directory: manifest checksums, config digest and
/// CSV header schemas. Empty means the run is consistent.
std::vector<std::string> check_run(const fs::path& run_dir);

/// Header every emitted CSV must start with, keyed by file name.
const std::vector<std::pair<std::string, std::string>>& csv_schemas();

Json read_json(const fs::path& path);

}  // namespace adrm
