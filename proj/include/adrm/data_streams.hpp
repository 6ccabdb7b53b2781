#pragma once

// Labeled image datasets, class-incremental task streams, training
// augmentation and graded corruptions. All pixel data lives in [0, 1].

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "adrm/model.hpp"
#include "adrm/tensor.hpp"

namespace adrm {

enum class Split { train, test };

struct DatasetHandle {
  std::string name;
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // [N], each in [0, n_classes)
  std::size_t n_classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  InputShape input_shape() const;
  /// Throws invalid-argument when labels, shape or pixel range are off.
  void validate() const;
};

struct LabeledData {
  DatasetHandle train;
  DatasetHandle test;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

Batch take(const DatasetHandle& data, std::span<const std::size_t> indices);

struct Task {
  std::size_t task_id = 0;
  std::vector<int> class_ids;
  std::vector<std::size_t> train_subset;
  std::vector<std::size_t> test_subset;
};

enum class ClassOrder { natural, shuffled };

struct SplitSpec {
  std::size_t n_steps = 1;
  std::size_t first_task_class_count = 0;
  ClassOrder order = ClassOrder::natural;
  std::uint64_t class_order_seed = 0;
};

struct TaskStream {
  std::vector<Task> tasks;
  SplitSpec split_spec;
  std::vector<int> class_order;  // position -> dataset label
};

/// Classes per task: an even split, with the first task absorbing the
/// remainder (10 classes over 9 steps -> 2,1,1,1,1,1,1,1,1).
std::vector<std::size_t> task_class_counts(std::size_t n_classes, std::size_t n_steps);

TaskStream make_task_stream(const LabeledData& data, std::size_t n_steps, std::uint64_t class_order_seed,
                            ClassOrder order = ClassOrder::natural);

/// Rewrites dataset labels as positions in the stream's class order so the
/// classifier head index of a class equals its arrival rank. A no-op for the
/// natural order.
void relabel_in_stream_order(LabeledData& data, TaskStream& stream);

/// Collapses every task into one (the joint setting).
TaskStream merge_tasks(const TaskStream& stream);

struct AugmentConfig {
  double flip_prob = 0.5;
  double crop_prob = 1.0;
  std::size_t crop_padding = 2;  // zero padding before the random crop
  double brightness_prob = 0.5;
  double brightness_low = -0.1;
  double brightness_high = 0.1;
  double contrast_prob = 0.5;
  double contrast_low = 0.8;
  double contrast_high = 1.2;

  static AugmentConfig disabled();
};

Tensor augment_batch(const Tensor& images, const AugmentConfig& config, std::uint64_t seed);

struct CorruptionSpec {
  std::string kind;
  int severity = 0;  // 0 is the clean image
};

constexpr int kMaxSeverity = 5;

struct CorruptionInfo {
  std::string kind;
  std::string parameter;  // what the severity table controls
  std::array<double, kMaxSeverity> values;
  bool stochastic = false;
};

const std::vector<CorruptionInfo>& corruption_table();
std::vector<std::string> corruption_kinds();
bool is_corruption_kind(std::string_view kind);

/// Same shape, values in [0, 1]. Severity 0 returns the input unchanged.
/// Stochastic kinds are deterministic given the seed.
Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint64_t seed);

}  // namespace adrm
