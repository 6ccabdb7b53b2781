#pragma once

// Experiment configuration: JSON documents validated against a fixed schema,
// normalized with every default (and every seed) written out, plus named
// presets.

#include <string>
#include <vector>

#include "adrm/adversarial.hpp"
#include "adrm/dataset_io.hpp"
#include "adrm/evaluation.hpp"
#include "adrm/trainer.hpp"
#include "json.hpp"

namespace adrm {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | cifar10 | directory
  std::string path;
  std::size_t limit_per_split = 0;
  SyntheticSpec synthetic;
};

struct StreamConfig {
  std::size_t n_steps = 5;
  ClassOrder class_order = ClassOrder::natural;
  std::uint64_t class_order_seed = 0;
};

struct EvalConfig {
  std::vector<std::string> corruption_kinds;
  std::vector<int> severities;
  std::vector<AttackKind> attack_kinds;
  std::vector<double> epsilons;
  int pgd_steps = 10;
  std::size_t max_examples = 0;  // 0: the whole test split
  std::uint64_t seed = 0;
  std::size_t analysis_subset = 2000;
  CkaKind cka = CkaKind::linear;
};

struct ExperimentConfig {
  std::string name;
  DatasetConfig dataset;
  StreamConfig stream;
  TrainConfig train;
  EvalConfig eval;
  std::string output_root;
  std::string run_name;
};

/// Defaults for every field, in the layout of a config file.
const Json& default_config_json();
/// Field-by-field description of the config format (types, defaults, notes).
Json config_schema();

/// Merges `doc` over the defaults. Unknown keys and type mismatches raise a
/// SchemaError carrying the dotted field path; value ranges are checked too.
Json normalize_config(const Json& doc);
ExperimentConfig parse_config(const Json& normalized);

/// Applies `path=value` overrides (value parsed as JSON, falling back to a
/// string) before normalization.
void apply_override(Json& doc, const std::string& assignment);

std::vector<std::string> preset_names();
/// Preset document before normalization. Throws invalid-argument for an
/// unknown name.
Json preset(const std::string& name);

/// SHA-256 of the compact dump of a normalized config.
std::string config_digest(const Json& normalized);
/// SHA-256 over the dataset and stream sections only; runs that agree here
/// evaluate on the same examples.
std::string dataset_digest(const Json& normalized);

LabeledData load_dataset(const DatasetConfig& config);

}  // namespace adrm
