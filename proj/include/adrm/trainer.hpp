#pragma once

// Class-incremental training loop: fine-tune, joint, experience replay and
// ADRM(r) over a task stream.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adrm/data_streams.hpp"
#include "adrm/diversifier.hpp"
#include "adrm/evaluation.hpp"
#include "adrm/memory.hpp"
#include "adrm/model.hpp"

namespace adrm {

enum class TrainMode { finetune, joint, er, adrm };
enum class OfferTiming { after_task, per_step };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);
std::string to_string(OfferTiming timing);
OfferTiming parse_offer_timing(std::string_view name);

struct Seeds {
  std::uint64_t data = 0;       // batch order and augmentation
  std::uint64_t init = 0;       // model initialization and head growth
  std::uint64_t memory = 0;     // reservoir decisions and rehearsal draws
  std::uint64_t diversify = 0;  // per-sample epsilons and subset picks
};

struct TrainConfig {
  std::string architecture = "small-cnn";
  TrainMode mode = TrainMode::er;
  DiversificationSpec diversification;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.1;
  std::vector<double> milestones{0.5, 0.75};  // fractions of each task's epochs
  std::size_t epochs_first = 10;
  std::size_t epochs_rest = 5;
  std::size_t memory_budget = 200;
  MemoryPolicy memory_policy = MemoryPolicy::reservoir;
  OfferTiming offer_timing = OfferTiming::after_task;
  bool augment = false;
  AugmentConfig augmentation;
  bool augment_diversified = false;
  Seeds seeds;

  void validate() const;
  bool uses_memory() const noexcept { return mode == TrainMode::er || mode == TrainMode::adrm; }
};

/// Learning rate for `epoch` of a task trained for `epochs` epochs.
double learning_rate(const TrainConfig& config, std::size_t epoch, std::size_t epochs);

struct StepRecord {
  std::size_t step = 0;  // global optimizer step
  std::size_t task = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::size_t current_size = 0;
  std::size_t rehearsal_size = 0;
  double current_loss = 0.0;
  double rehearsal_loss = 0.0;  // 0 when no rehearsal batch was used
  double total_loss = 0.0;
};

struct DiversifierRecord {
  std::size_t step = 0;
  std::size_t task = 0;
  std::size_t memory_batch = 0;
  std::size_t fooled = 0;
  std::size_t resisted = 0;
  std::size_t added_fooled = 0;
  std::size_t added_resisted = 0;
  double mean_epsilon = 0.0;
  double fooling_rate = 0.0;
};

// State carried between tasks; enough to resume a stream bit-identically.
struct StreamState {
  std::size_t next_task = 0;
  std::size_t global_step = 0;
  ModelState model;
  MemoryBuffer memory{0, 0};
  AccuracyMatrix matrix;
};

struct TrainObserver {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const DiversifierRecord&)> on_diversify;
  /// Called after a task is trained, offered to memory and evaluated.
  std::function<void(const StreamState&)> on_task_end;
};

struct TaskLog {
  std::vector<StepRecord> steps;
  std::vector<DiversifierRecord> diversifier;
};

/// Trains one task in place. `model` must already cover the task's classes.
TaskLog train_task(ModelState& model, MemoryBuffer& memory, const LabeledData& data, const Task& task,
                   const TrainConfig& config, std::size_t& global_step, const TrainObserver& observer = {});

struct RunResult {
  ModelState model;
  MemoryBuffer memory{0, 0};
  AccuracyMatrix matrix;
  std::vector<StepRecord> steps;
  std::vector<DiversifierRecord> diversifier;
};

/// Fresh state for `stream` under `config` (joint mode collapses the stream).
StreamState initial_state(const LabeledData& data, const TaskStream& stream, const TrainConfig& config);

/// Trains every remaining task of `stream` starting from `state`, evaluating
/// all seen tasks after each one. Labels must already be in stream order
/// (see relabel_in_stream_order).
RunResult run_stream(const LabeledData& data, const TaskStream& stream, const TrainConfig& config,
                     const TrainObserver& observer = {}, std::optional<StreamState> resume = std::nullopt);

/// Accuracy on each seen task's test split, used to fill one matrix row.
std::vector<double> evaluate_seen_tasks(const ModelState& model, const LabeledData& data, const TaskStream& stream,
                                        std::size_t through_task);

}  // namespace adrm
