#include "adrm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adrm/error.hpp"
#include "adrm/rng.hpp"

namespace adrm {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::finetune: return "finetune";
    case TrainMode::joint: return "joint";
    case TrainMode::er: return "er";
    case TrainMode::adrm: return "adrm";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view name) {
  for (auto m : {TrainMode::finetune, TrainMode::joint, TrainMode::er, TrainMode::adrm})
    if (to_string(m) == name) return m;
  fail(ErrorKind::invalid_argument, "unknown training mode '" + std::string(name) + "'");
}

std::string to_string(OfferTiming timing) { return timing == OfferTiming::after_task ? "after_task" : "per_step"; }

OfferTiming parse_offer_timing(std::string_view name) {
  if (name == "after_task") return OfferTiming::after_task;
  if (name == "per_step") return OfferTiming::per_step;
  fail(ErrorKind::invalid_argument, "unknown offer timing '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be at least 1");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0, 1]");
  for (double m : milestones) require(m > 0.0 && m < 1.0, "milestones are fractions in (0, 1)");
  require(std::ranges::is_sorted(milestones), "milestones must be increasing");
  require(epochs_first >= 1 && epochs_rest >= 1, "epoch counts must be positive");
  if (uses_memory()) require(memory_budget >= 1, "rehearsal modes need a positive memory budget");
  if (mode == TrainMode::adrm) diversification.validate();
}

double learning_rate(const TrainConfig& config, std::size_t epoch, std::size_t epochs) {
  double lr = config.lr;
  for (double m : config.milestones)
    if (static_cast<double>(epoch) >= std::floor(m * static_cast<double>(epochs))) lr *= config.lr_decay;
  return lr;
}

namespace {

std::uint64_t task_seed(std::uint64_t base, const char* stream, std::size_t task) {
  return derive_seed(base, std::string(stream) + "/" + std::to_string(task));
}

Batch augmented(const Batch& b, const TrainConfig& config, std::uint64_t seed) {
  if (!config.augment || b.size() == 0) return b;
  return {augment_batch(b.images, config.augmentation, seed), b.labels};
}

// Pixel-space augmentation of rows [from, end) only.
void augment_tail(Batch& b, std::size_t from, const AugmentConfig& cfg, std::uint64_t seed) {
  if (from >= b.size()) return;
  std::vector<std::size_t> idx(b.size() - from);
  std::iota(idx.begin(), idx.end(), from);
  const Tensor tail = augment_batch(b.images.gather_rows(idx), cfg, seed);
  std::ranges::copy(tail.values(), b.images.data() + from * b.images.row_size());
}

LossAndGrads batch_grads(const ModelState& model, const Batch& b, std::size_t step) {
  try {
    return loss_and_grads(model, b.images, b.labels, {.params = true, .inputs = false, .mode = Mode::train});
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::numeric_failure) throw TrainingFailure(step, e.what());
    throw;
  }
}

std::size_t seen_classes_through(const TaskStream& stream, std::size_t t) {
  std::size_t n = 0;
  for (std::size_t i = 0; i <= t; ++i) n += stream.tasks[i].class_ids.size();
  return n;
}

void require_stream_order(const TaskStream& stream) {
  int next = 0;
  for (const auto& task : stream.tasks)
    for (int c : task.class_ids)
      require(c == next++, "task classes must be numbered in arrival order; call relabel_in_stream_order first");
}

}  // namespace

TaskLog train_task(ModelState& model, MemoryBuffer& memory, const LabeledData& data, const Task& task,
                   const TrainConfig& config, std::size_t& global_step, const TrainObserver& observer) {
  config.validate();
  require(!task.train_subset.empty(), "task " + std::to_string(task.task_id) + " has no training examples");
  for (int c : task.class_ids)
    require(c >= 0 && static_cast<std::size_t>(c) < model.n_classes(), "model head does not cover the task classes");

  TaskLog log;
  const std::size_t t = task.task_id;
  const std::size_t epochs = t == 0 || config.mode == TrainMode::joint ? config.epochs_first : config.epochs_rest;
  const bool rehearse = config.uses_memory();
  const bool adrm = config.mode == TrainMode::adrm;

  Rng sample_rng(task_seed(config.seeds.memory, "sample", t));
  Rng epsilon_rng(task_seed(config.seeds.diversify, "epsilon", t));
  Rng subset_rng(task_seed(config.seeds.diversify, "subset", t));
  ParamSet velocity = model.params.zeros_like();

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = learning_rate(config, epoch, epochs);
    Rng data_rng(derive_seed(task_seed(config.seeds.data, "data", t), epoch));
    std::vector<std::size_t> order = task.train_subset;
    std::shuffle(order.begin(), order.end(), data_rng);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      // Fixed draws per step, whatever the mode, so every mode sees the same
      // data order and augmentation.
      const std::uint64_t seed_current = data_rng(), seed_memory = data_rng(), seed_diversified = data_rng();

      const Batch raw = take(data.train, std::span(order).subspan(start, end - start));
      const Batch current = augmented(raw, config, seed_current);

      StepRecord rec;
      rec.step = global_step;
      rec.task = t;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.current_size = current.size();

      std::optional<Batch> rehearsal;
      if (rehearse && !memory.empty()) {
        const Batch mem = memory.sample(config.batch_size, sample_rng);
        Batch base = augmented(mem, config, seed_memory);
        if (adrm) {
          const DiversifiedBatch div = diversify(model, mem, config.diversification, epsilon_rng);
          MixCounts counts;
          Batch mixed = mix_rehearsal(base, div, config.diversification.ratio, subset_rng, &counts);
          if (config.augment_diversified) augment_tail(mixed, base.size(), config.augmentation, seed_diversified);
          const DiversifierRecord d{global_step,       t,          mem.size(),         div.fooled.size(),
                                    div.resisted.size(), counts.fooled, counts.resisted, div.mean_epsilon(),
                                    div.fooling_rate()};
          log.diversifier.push_back(d);
          if (observer.on_diversify) observer.on_diversify(d);
          base = std::move(mixed);
        }
        rehearsal = std::move(base);
      }

      LossAndGrads g = batch_grads(model, current, global_step);
      model.buffers = g.updated_buffers;
      rec.current_loss = g.loss;
      if (rehearsal) {
        const LossAndGrads r = batch_grads(model, *rehearsal, global_step);
        model.buffers = r.updated_buffers;
        rec.rehearsal_loss = r.loss;
        rec.rehearsal_size = rehearsal->size();
        auto gf = g.param_grads.flat();
        const auto rf = r.param_grads.flat();
        for (std::size_t k = 0; k < gf.size(); ++k) gf[k] += rf[k];
      }
      rec.total_loss = rec.current_loss + rec.rehearsal_loss;
      if (!std::isfinite(rec.total_loss) || !g.param_grads.all_finite())
        throw TrainingFailure(global_step, "non-finite loss or gradient at step " + std::to_string(global_step));

      auto p = model.params.flat();
      auto v = velocity.flat();
      const auto gf = g.param_grads.flat();
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = config.momentum * v[k] + gf[k];
        p[k] -= lr * v[k];
      }
      if (!model.params.all_finite())
        throw TrainingFailure(global_step, "parameters diverged at step " + std::to_string(global_step));

      if (rehearse && config.offer_timing == OfferTiming::per_step) memory.offer_all(raw.images, raw.labels, t);

      log.steps.push_back(rec);
      if (observer.on_step) observer.on_step(rec);
      ++global_step;
    }
  }

  if (rehearse && config.offer_timing == OfferTiming::after_task) {
    const Batch all = take(data.train, task.train_subset);
    memory.offer_all(all.images, all.labels, t);
  }
  return log;
}

std::vector<double> evaluate_seen_tasks(const ModelState& model, const LabeledData& data, const TaskStream& stream,
                                        std::size_t through_task) {
  std::vector<double> row;
  for (std::size_t i = 0; i <= through_task; ++i) {
    const Task& task = stream.tasks.at(i);
    require(!task.test_subset.empty(), "task " + std::to_string(i) + " has no test examples");
    const Batch b = take(data.test, task.test_subset);
    row.push_back(accuracy(model, b.images, b.labels));
  }
  return row;
}

StreamState initial_state(const LabeledData& data, const TaskStream& stream, const TrainConfig& config) {
  config.validate();
  require(!stream.tasks.empty(), "task stream is empty");
  const std::size_t first = config.mode == TrainMode::joint ? seen_classes_through(stream, stream.tasks.size() - 1)
                                                            : stream.tasks.front().class_ids.size();
  require(first >= 2, "the first task needs at least two classes");
  StreamState s;
  s.model = init_model(config.architecture, first, config.seeds.init, data.train.input_shape());
  s.memory = MemoryBuffer(config.uses_memory() ? config.memory_budget : 0, derive_seed(config.seeds.memory, "buffer"),
                          config.memory_policy);
  s.matrix = AccuracyMatrix(config.mode == TrainMode::joint ? 1 : stream.tasks.size());
  return s;
}

RunResult run_stream(const LabeledData& data, const TaskStream& stream, const TrainConfig& config,
                     const TrainObserver& observer, std::optional<StreamState> resume) {
  config.validate();
  require_stream_order(stream);
  require(data.train.input_shape() == data.test.input_shape(), "train and test images differ in shape");
  const TaskStream effective = config.mode == TrainMode::joint ? merge_tasks(stream) : stream;

  StreamState state = resume ? std::move(*resume) : initial_state(data, stream, config);
  require(state.matrix.n_tasks() == effective.tasks.size(), "resume state does not match the stream");

  RunResult result;
  for (std::size_t t = state.next_task; t < effective.tasks.size(); ++t) {
    const std::size_t needed = seen_classes_through(effective, t);
    if (state.model.n_classes() < needed) state.model = grow_head(state.model, needed);
    TaskLog log = train_task(state.model, state.memory, data, effective.tasks[t], config, state.global_step, observer);
    result.steps.insert(result.steps.end(), log.steps.begin(), log.steps.end());
    result.diversifier.insert(result.diversifier.end(), log.diversifier.begin(), log.diversifier.end());

    const auto row = evaluate_seen_tasks(state.model, data, effective, t);
    for (std::size_t i = 0; i < row.size(); ++i) state.matrix.set(t, i, row[i]);
    state.next_task = t + 1;
    if (observer.on_task_end) observer.on_task_end(state);
  }
  result.model = std::move(state.model);
  result.memory = std::move(state.memory);
  result.matrix = std::move(state.matrix);
  return result;
}

}  // namespace adrm
