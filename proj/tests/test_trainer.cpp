#include <algorithm>
#include <cmath>

#include "adrm/error.hpp"
#include "adrm/trainer.hpp"
#include "doctest.h"
#include "random_data.hpp"

using namespace adrm;

namespace {

// Gaussian blobs in a 1x4x4 image space: class c lights up pixel group c.
LabeledData blobs(std::size_t k, std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed,
                  double noise = 0.05) {
  LabeledData d;
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  auto fill = [&](DatasetHandle& h, std::size_t per_class) {
    h.name = "blobs";
    h.n_classes = k;
    h.images = Tensor({k * per_class, 1, 4, 4});
    for (std::size_t i = 0; i < k * per_class; ++i) {
      const int c = static_cast<int>(i % k);
      h.labels.push_back(c);
      for (std::size_t p = 0; p < 16; ++p) {
        const bool on = p % k == static_cast<std::size_t>(c);
        h.images[i * 16 + p] = std::clamp((on ? 0.8 : 0.2) + g(rng), 0.0, 1.0);
      }
    }
  };
  fill(d.train, train_per_class);
  fill(d.test, test_per_class);
  d.test.split = Split::test;
  return d;
}

TrainConfig quick(TrainMode mode) {
  TrainConfig c;
  c.architecture = "mlp";
  c.mode = mode;
  c.batch_size = 16;
  c.lr = 0.05;
  c.epochs_first = 4;
  c.epochs_rest = 4;
  c.memory_budget = 50;
  c.seeds = {1, 2, 3, 4};
  return c;
}

}  // namespace

TEST_CASE("learning-rate milestones") {
  TrainConfig c;
  c.lr = 1.0;
  CHECK(learning_rate(c, 0, 10) == 1.0);
  CHECK(learning_rate(c, 4, 10) == 1.0);
  CHECK(learning_rate(c, 5, 10) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 7, 10) == doctest::Approx(0.01));
  CHECK(learning_rate(c, 1, 4) == 1.0);
  CHECK(learning_rate(c, 2, 4) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 3, 4) == doctest::Approx(0.01));
}

TEST_CASE("config validation") {
  auto c = quick(TrainMode::er);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = quick(TrainMode::adrm);
  c.diversification.ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = quick(TrainMode::er);
  c.milestones = {0.75, 0.5};
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_train_mode("adrm") == TrainMode::adrm);
  CHECK_THROWS_AS(parse_train_mode("icarl"), Error);
}

TEST_CASE("finetune keeps no memory and never rehearses") {
  auto data = blobs(4, 30, 10, 0);
  auto stream = make_task_stream(data, 2, 0);
  const auto r = run_stream(data, stream, quick(TrainMode::finetune));
  CHECK(r.memory.empty());
  for (const auto& s : r.steps) {
    CHECK(s.rehearsal_loss == 0.0);
    CHECK(s.rehearsal_size == 0);
  }
}

TEST_CASE("step loss is the sum of the two batch means") {
  auto data = blobs(4, 30, 10, 1);
  auto stream = make_task_stream(data, 2, 0);
  auto cfg = quick(TrainMode::adrm);
  cfg.diversification.ratio = 0.5;
  const auto r = run_stream(data, stream, cfg);
  bool rehearsed = false;
  for (const auto& s : r.steps) {
    CHECK(s.total_loss == s.current_loss + s.rehearsal_loss);
    if (s.task > 0) {
      rehearsed = true;
      CHECK(s.rehearsal_size >= cfg.batch_size);
      CHECK(s.rehearsal_loss > 0.0);
    }
  }
  CHECK(rehearsed);
  CHECK(r.diversifier.size() == std::ranges::count_if(r.steps, [](const StepRecord& s) { return s.task > 0; }));
}

TEST_CASE("accuracy matrix is lower-triangular and joint has one row") {
  auto data = blobs(6, 20, 10, 2);
  auto stream = make_task_stream(data, 3, 0);
  const auto r = run_stream(data, stream, quick(TrainMode::er));
  CHECK(r.matrix.n_tasks() == 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.matrix.has(t, i) == (i <= t));

  const auto j = run_stream(data, stream, quick(TrainMode::joint));
  CHECK(j.matrix.n_tasks() == 1);
  CHECK(aca(j.matrix) == j.matrix.at(0, 0));
  CHECK(j.model.n_classes() == 6);
}

TEST_CASE("memory only holds tasks already presented") {
  auto data = blobs(6, 20, 5, 3);
  auto stream = make_task_stream(data, 3, 0);
  auto cfg = quick(TrainMode::er);
  cfg.memory_budget = 10;
  TrainObserver obs;
  obs.on_task_end = [](const StreamState& s) {
    CHECK(s.memory.size() <= 10);
    for (const auto& e : s.memory.entries()) {
      CHECK(e.task_id < s.next_task);
      CHECK(e.label < static_cast<int>(2 * s.next_task));
    }
  };
  run_stream(data, stream, cfg, obs);
  cfg.offer_timing = OfferTiming::per_step;
  run_stream(data, stream, cfg, obs);
}

TEST_CASE("identical configs give identical runs") {
  auto data = blobs(4, 20, 10, 4);
  auto stream = make_task_stream(data, 2, 0);
  auto cfg = quick(TrainMode::adrm);
  cfg.augment = true;
  const auto a = run_stream(data, stream, cfg);
  const auto b = run_stream(data, stream, cfg);
  CHECK(a.model.params == b.model.params);
  CHECK(a.matrix == b.matrix);
  CHECK(a.matrix.to_csv() == b.matrix.to_csv());
}

TEST_CASE("adrm with ratio zero retraces experience replay") {
  auto data = blobs(6, 20, 10, 5);
  auto stream = make_task_stream(data, 3, 0);
  auto er = quick(TrainMode::er);
  er.augment = true;
  auto adrm = er;
  adrm.mode = TrainMode::adrm;
  adrm.diversification.ratio = 0.0;
  const auto a = run_stream(data, stream, er);
  const auto b = run_stream(data, stream, adrm);
  CHECK(a.model.params == b.model.params);
  CHECK(a.memory == b.memory);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].total_loss == b.steps[i].total_loss);
  CHECK_FALSE(b.diversifier.empty());

  adrm.diversification.ratio = 0.25;
  CHECK_FALSE(run_stream(data, stream, adrm).model.params == a.model.params);
}

TEST_CASE("replay retains the first task where finetuning forgets it") {
  // Two tasks of two well-separated blobs each.
  auto data = blobs(4, 60, 50, 6, 0.08);
  auto stream = make_task_stream(data, 2, 0);
  auto er = quick(TrainMode::er);
  er.epochs_first = er.epochs_rest = 8;
  auto ft = er;
  ft.mode = TrainMode::finetune;
  const auto r_er = run_stream(data, stream, er);
  const auto r_ft = run_stream(data, stream, ft);
  CHECK(r_er.matrix.at(1, 0) >= 0.9);
  CHECK(r_ft.matrix.at(1, 0) <= 0.6);
}

TEST_CASE("resuming from a task boundary reproduces the full run") {
  auto data = blobs(6, 20, 10, 7);
  auto stream = make_task_stream(data, 3, 0);
  auto cfg = quick(TrainMode::adrm);
  std::optional<StreamState> after_first;
  TrainObserver obs;
  obs.on_task_end = [&](const StreamState& s) {
    if (s.next_task == 1) after_first = s;
  };
  const auto full = run_stream(data, stream, cfg, obs);
  REQUIRE(after_first);
  const auto resumed = run_stream(data, stream, cfg, {}, after_first);
  CHECK(resumed.model.params == full.model.params);
  CHECK(resumed.matrix == full.matrix);
}

TEST_CASE("stream preconditions") {
  auto data = blobs(4, 10, 5, 8);
  auto stream = make_task_stream(data, 4, 0);
  // First task of a single class cannot seed a classifier.
  CHECK_THROWS_AS(run_stream(data, stream, quick(TrainMode::er)), Error);

  auto shuffled = make_task_stream(data, 2, 3, ClassOrder::shuffled);
  if (shuffled.class_order != std::vector<int>{0, 1, 2, 3})
    CHECK_THROWS_AS(run_stream(data, shuffled, quick(TrainMode::er)), Error);
  relabel_in_stream_order(data, shuffled);
  CHECK_NOTHROW(run_stream(data, shuffled, quick(TrainMode::finetune)));
}

TEST_CASE("divergence surfaces as a training failure with its step") {
  auto data = blobs(4, 20, 5, 9);
  auto stream = make_task_stream(data, 2, 0);
  auto cfg = quick(TrainMode::finetune);
  cfg.lr = 1e300;
  try {
    run_stream(data, stream, cfg);
    FAIL("expected divergence");
  } catch (const TrainingFailure& e) {
    CHECK(e.kind() == ErrorKind::training_failure);
    MESSAGE("diverged at step " << e.step());
  }
}
