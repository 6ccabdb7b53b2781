#pragma once

// Accuracy bookkeeping, robustness sweeps, feature export and CKA.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adrm/adversarial.hpp"
#include "adrm/data_streams.hpp"
#include "adrm/model.hpp"

namespace adrm {

// R[t][i]: accuracy on task i's test split after training through task t.
// Only i <= t is ever recorded.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t n_tasks);
  /// Builds from explicit rows; row t must hold t + 1 values.
  static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t n_tasks() const noexcept { return rows_.size(); }
  void set(std::size_t t, std::size_t i, double accuracy);
  bool has(std::size_t t, std::size_t i) const;
  double at(std::size_t t, std::size_t i) const;
  bool row_complete(std::size_t t) const;
  /// Number of leading rows that are complete.
  std::size_t completed_rows() const;

  /// Header `after_task,task_0,...`; cells above the diagonal (and unfilled
  /// ones) are empty, values use six decimals.
  std::string to_csv() const;
  static AccuracyMatrix from_csv(const std::string& text);

  bool operator==(const AccuracyMatrix&) const;

 private:
  std::vector<std::vector<double>> rows_;  // NaN marks a missing value
};

/// Mean of the final row. Throws invalid-argument if it is incomplete.
double aca(const AccuracyMatrix& matrix);

double accuracy(const ModelState& model, const Tensor& images, std::span<const int> labels);

struct CorruptionRow {
  std::string model_id;
  std::string kind;
  int severity = 0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

/// Per-(kind, severity) corruption seeds are derive_seed(seed, "kind/severity"),
/// the same rule the corruption exporter uses.
std::vector<CorruptionRow> corruption_sweep(const ModelState& model, const Tensor& images,
                                            std::span<const int> labels, const std::vector<std::string>& kinds,
                                            const std::vector<int>& severities, std::uint64_t seed,
                                            const std::string& model_id = "model");

struct AttackRow {
  std::string model_id;
  std::string attack;
  double epsilon = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

std::vector<AttackRow> adversarial_sweep(const ModelState& model, const Tensor& images, std::span<const int> labels,
                                         const std::vector<AttackKind>& kinds, const std::vector<double>& epsilons,
                                         std::uint64_t seed, const std::string& model_id = "model",
                                         int pgd_steps = 10);

std::string corruption_csv(const std::vector<CorruptionRow>& rows);
std::string attack_csv(const std::vector<AttackRow>& rows);

struct FeatureMatrix {
  Tensor features;  // [N, F]
  std::vector<int> labels;
  std::string model_id;
  std::string layer_id = "penultimate";
};

FeatureMatrix extract_features(const ModelState& model, const Tensor& images, std::span<const int> labels = {},
                               const std::string& model_id = "model", std::size_t chunk = 256);

/// Linear CKA between two representations of the same N examples. Throws
/// undefined-similarity when either side has no variance.
double linear_cka(const Tensor& x, const Tensor& y);
/// Kernel CKA with Gaussian kernels whose bandwidth is `sigma_scale` times the
/// median pairwise distance of each representation.
double rbf_cka(const Tensor& x, const Tensor& y, double sigma_scale = 0.5);

enum class CkaKind { linear, rbf };

struct SimilarityMatrix {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> scores;

  /// Square CSV with a model_id header row and column.
  std::string to_csv() const;
};

SimilarityMatrix similarity_matrix(const std::vector<FeatureMatrix>& features, CkaKind kind = CkaKind::linear);

}  // namespace adrm
