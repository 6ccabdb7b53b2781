#include <unistd.h>

#include <cstdlib>
#include <fstream>

#include "adrm/checkpoint.hpp"
#include "adrm/error.hpp"
#include "adrm/run.hpp"
#include "doctest.h"

using namespace adrm;

namespace {

// Fresh scratch directory per call, removed by the guard.
struct Scratch {
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("adrm_run_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

// A few-second stream: 6 synthetic classes at 8x8 over 3 tasks, mlp.
Json tiny(const std::string& mode, std::uint64_t seed = 0) {
  Json doc = {{"name", "tiny-" + mode},
              {"seed", seed},
              {"dataset",
               {{"synthetic",
                 {{"n_classes", 6}, {"height", 8}, {"width", 8}, {"train_per_class", 24}, {"test_per_class", 8}}}}},
              {"stream", {{"n_steps", 3}}},
              {"train",
               {{"architecture", "mlp"},
                {"mode", mode},
                {"batch_size", 16},
                {"lr", 0.05},
                {"epochs_first", 2},
                {"epochs_rest", 1},
                {"memory_budget", 24}}},
              {"evaluation",
               {{"corruptions", {{"kinds", {"gaussian_noise", "fog"}}, {"severities", {0, 1}}}},
                {"attacks", {{"epsilons", {0.0, 2 / 255.0, 4 / 255.0, 8 / 255.0, 16 / 255.0}}, {"pgd_steps", 3}}},
                {"analysis_subset", 30}}}};
  if (mode == "adrm") doc["train"]["diversification"] = {{"ratio", 0.25}};
  return doc;
}

fs::path train_into(const fs::path& dir, const Json& doc) {
  TrainOptions o;
  o.run_dir = dir;
  return cmd_train(doc, o);
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::invalid_argument;
}

}  // namespace

TEST_CASE("train writes a complete, consistent run directory") {
  Scratch s;
  const fs::path run = train_into(s.dir / "er", tiny("er"));
  for (const char* f : {"config.json", "manifest.json", "accuracy_matrix.csv", "metrics.csv",
                        "checkpoints/task_000.ckpt", "checkpoints/task_002.ckpt", "checkpoints/final.ckpt"})
    CHECK_MESSAGE(fs::exists(run / f), f);
  CHECK_FALSE(fs::exists(run / "diversifier.csv"));
  CHECK_FALSE(fs::exists(run / ".lock"));

  const AccuracyMatrix m = AccuracyMatrix::from_csv(read_text(run / "accuracy_matrix.csv"));
  CHECK(m.n_tasks() == 3);
  CHECK(m.completed_rows() == 3);

  const Json manifest = read_json(run / "manifest.json");
  CHECK(manifest["phases"]["train"]["status"] == "completed");
  CHECK(manifest["config_digest"] == config_digest(read_json(run / "config.json")));
  CHECK(manifest["config_digest"] == config_digest(normalize_config(tiny("er"))));
  CHECK(check_run(run).empty());

  // 48 training examples per task at batch 16: 3 steps per epoch, 2 epochs on task 0
  CHECK(data_rows(run / "metrics.csv") == 2 * 3 + 3 + 3);
}

TEST_CASE("final checkpoint round-trips the trained state") {
  Scratch s;
  const fs::path run = train_into(s.dir / "adrm", tiny("adrm"));
  const Checkpoint ck = load_checkpoint(run / "checkpoints" / "final.ckpt");
  CHECK(ck.config_digest == config_digest(normalize_config(tiny("adrm"))));
  CHECK(ck.state.next_task == 3);
  CHECK(ck.state.memory.size() == 24);
  CHECK(ck.state.model.n_classes() == 6);
  CHECK(ck.state.matrix == AccuracyMatrix::from_csv(read_text(run / "accuracy_matrix.csv")));

  // saving what was loaded reproduces the file byte for byte
  save_checkpoint(s.dir / "copy.ckpt", ck.state, ck.config_digest);
  CHECK(read_text(s.dir / "copy.ckpt") == read_text(run / "checkpoints" / "final.ckpt"));

  // the restored network gives the recorded final-row accuracies
  const ExperimentConfig cfg = parse_config(normalize_config(tiny("adrm")));
  LabeledData data = load_dataset(cfg.dataset);
  TaskStream stream = make_task_stream(data, cfg.stream.n_steps, cfg.stream.class_order_seed);
  relabel_in_stream_order(data, stream);
  const auto row = evaluate_seen_tasks(ck.state.model, data, stream, 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(row[i] == doctest::Approx(ck.state.matrix.at(2, i)).epsilon(1e-6));
}

TEST_CASE("damaged or missing checkpoints are reported") {
  Scratch s;
  CHECK(kind_of([&] { load_checkpoint(s.dir / "none.ckpt"); }) == ErrorKind::artifact_not_found);
  write_text_atomic(s.dir / "junk.ckpt", "not a checkpoint at all");
  CHECK(kind_of([&] { load_checkpoint(s.dir / "junk.ckpt"); }) == ErrorKind::io_error);

  const fs::path run = train_into(s.dir / "er", tiny("er"));
  std::string blob = read_text(run / "checkpoints" / "final.ckpt");
  write_text_atomic(s.dir / "short.ckpt", blob.substr(0, blob.size() - 8));
  CHECK(kind_of([&] { load_checkpoint(s.dir / "short.ckpt"); }) == ErrorKind::io_error);
}

TEST_CASE("two trainings with one config give identical matrices") {
  Scratch s;
  const fs::path a = train_into(s.dir / "a", tiny("adrm", 3));
  const fs::path b = train_into(s.dir / "b", tiny("adrm", 3));
  CHECK(read_text(a / "accuracy_matrix.csv") == read_text(b / "accuracy_matrix.csv"));
  CHECK(read_text(a / "metrics.csv") == read_text(b / "metrics.csv"));
  CHECK(read_text(a / "diversifier.csv") == read_text(b / "diversifier.csv"));
  // re-running into the same directory is allowed and reproduces it
  train_into(s.dir / "a", tiny("adrm", 3));
  CHECK(read_text(a / "accuracy_matrix.csv") == read_text(b / "accuracy_matrix.csv"));
}

TEST_CASE("diversifier log has one row per step after the first task") {
  Scratch s;
  const fs::path run = train_into(s.dir / "adrm", tiny("adrm"));
  // tasks 1 and 2: 1 epoch of 48 examples at batch 16 each
  CHECK(data_rows(run / "diversifier.csv") == 3 + 3);
  CHECK(check_run(run).empty());
}

TEST_CASE("resume continues bit-identically") {
  Scratch s;
  const fs::path full = train_into(s.dir / "full", tiny("adrm", 5));
  const fs::path part = train_into(s.dir / "part", tiny("adrm", 5));
  fs::remove(part / "checkpoints" / "task_002.ckpt");
  fs::remove(part / "checkpoints" / "task_001.ckpt");
  fs::remove(part / "checkpoints" / "final.ckpt");
  TrainOptions o;
  o.run_dir = part;
  o.resume = true;
  cmd_train(tiny("adrm", 5), o);
  for (const char* f : {"accuracy_matrix.csv", "metrics.csv", "diversifier.csv", "checkpoints/final.ckpt"})
    CHECK_MESSAGE(read_text(full / f) == read_text(part / f), f);
}

TEST_CASE("train errors") {
  Scratch s;
  Json bad = tiny("er");
  bad["train"]["momentun"] = 0.5;
  try {
    train_into(s.dir / "bad", bad);
    FAIL("accepted an unknown key");
  } catch (const SchemaError& e) {
    CHECK(e.field_path() == "train.momentun");
  }

  // another writer holds the lock
  fs::create_directories(s.dir / "locked");
  write_text_atomic(s.dir / "locked" / ".lock", "x");
  CHECK(kind_of([&] { train_into(s.dir / "locked", tiny("er")); }) == ErrorKind::io_error);

  // a directory belongs to one config
  train_into(s.dir / "owned", tiny("er"));
  CHECK(kind_of([&] { train_into(s.dir / "owned", tiny("finetune")); }) == ErrorKind::invalid_argument);
}

TEST_CASE("a diverging run leaves partial artifacts and a failed status") {
  Scratch s;
  Json doc = tiny("er");
  doc["train"]["lr"] = 1e300;
  try {
    train_into(s.dir / "div", doc);
    FAIL("training should have failed");
  } catch (const TrainingFailure& e) {
    const Json manifest = read_json(s.dir / "div" / "manifest.json");
    CHECK(manifest["phases"]["train"]["status"] == "failed");
    CHECK(manifest["phases"]["train"]["failed_step"] == e.step());
    CHECK(fs::exists(s.dir / "div" / "config.json"));
    CHECK(check_run(s.dir / "div").empty());
  }
  CHECK(kind_of([&] { cmd_eval(s.dir / "div"); }) == ErrorKind::artifact_not_found);
}

TEST_CASE("check-run notices tampering") {
  Scratch s;
  const fs::path run = train_into(s.dir / "er", tiny("er"));
  std::string csv = read_text(run / "metrics.csv");
  csv[0] = 'S';
  write_text_atomic(run / "metrics.csv", csv);
  const auto problems = check_run(run);
  CHECK(problems.size() == 2);  // checksum and header
  fs::remove(run / "checkpoints" / "task_001.ckpt");
  CHECK(check_run(run).size() == 3);
}

TEST_CASE("eval tables") {
  Scratch s;
  const fs::path run = train_into(s.dir / "er", tiny("er"));
  const EvalTables t = cmd_eval(run);
  CHECK(t.corruption.size() == 2 * 2);
  CHECK(t.attack.size() == 15);
  CHECK(data_rows(run / "eval" / "corruption_sweep.csv") == 4);
  CHECK(data_rows(run / "eval" / "adversarial_sweep.csv") == 15);
  CHECK(check_run(run).empty());

  // the clean rows agree with the model's accuracy on the whole test split
  const Checkpoint ck = load_checkpoint(run / "checkpoints" / "final.ckpt");
  const ExperimentConfig cfg = parse_config(normalize_config(tiny("er")));
  LabeledData data = load_dataset(cfg.dataset);
  TaskStream stream = make_task_stream(data, cfg.stream.n_steps, cfg.stream.class_order_seed);
  relabel_in_stream_order(data, stream);
  const double clean = accuracy(ck.state.model, data.test.images, data.test.labels);
  for (const auto& r : t.corruption)
    if (r.severity == 0) CHECK(r.accuracy == doctest::Approx(clean));

  EvalOptions zero;
  zero.overrides = {"evaluation.attacks.epsilons=[0]"};
  zero.corruptions = false;
  const EvalTables z = cmd_eval(run, zero);
  CHECK(z.attack.size() == 3);
  for (const auto& r : z.attack) CHECK(r.accuracy == doctest::Approx(clean));

  EvalOptions few;
  few.overrides = {"evaluation.max_examples=10"};
  few.attacks = false;
  CHECK(cmd_eval(run, few).corruption.front().n == 10);

  fs::remove(run / "checkpoints" / "final.ckpt");
  CHECK(kind_of([&] { cmd_eval(run); }) == ErrorKind::artifact_not_found);
  CHECK(kind_of([&] { cmd_eval(s.dir / "missing"); }) == ErrorKind::artifact_not_found);
}

TEST_CASE("analyze") {
  Scratch s;
  const fs::path a = train_into(s.dir / "a", tiny("er", 0));
  Json other = tiny("er", 0);
  other["seeds"] = {{"init", 9}};
  const fs::path b = train_into(s.dir / "b", other);
  const fs::path f = train_into(s.dir / "f", tiny("finetune", 0));

  AnalyzeOptions o;
  o.out_dir = s.dir / "self";
  const SimilarityMatrix self = cmd_analyze({a, a}, o);
  REQUIRE(self.scores.size() == 1);
  CHECK(self.scores[0][0] == doctest::Approx(1.0).epsilon(1e-9));

  o.out_dir = s.dir / "three";
  const SimilarityMatrix m = cmd_analyze({a, b, f}, o);
  REQUIRE(m.scores.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m.scores[i][i] == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(m.scores[i][j] == m.scores[j][i]);
      CHECK(m.scores[i][j] >= -1e-12);
      CHECK(m.scores[i][j] <= 1 + 1e-9);
    }
  }
  CHECK(m.model_ids == std::vector<std::string>{"a", "b", "f"});
  const Tensor fa = read_npy(s.dir / "three" / "features" / "a.npy");
  CHECK(fa.shape()[0] == 30);
  CHECK(read_npy_labels(s.dir / "three" / "features" / "labels.npy").size() == 30);
  CHECK(check_run(s.dir / "three").empty());

  Json elsewhere = tiny("er", 0);
  elsewhere["dataset"]["synthetic"]["seed"] = 4;
  const fs::path c = train_into(s.dir / "c", elsewhere);
  o.out_dir = s.dir / "mixed";
  CHECK(kind_of([&] { cmd_analyze({a, c}, o); }) == ErrorKind::incompatible_runs);
}

TEST_CASE("default run directory") {
  Json n = normalize_config(tiny("er"));
  ::setenv(kOutputRootEnv, "/tmp/adrm-root", 1);
  CHECK(default_run_dir(n) == fs::path("/tmp/adrm-root") / ("tiny-er-" + config_digest(n).substr(0, 12)));
  ::unsetenv(kOutputRootEnv);
  CHECK(default_run_dir(n).parent_path() == fs::path("runs"));
  n["output"]["root"] = "/data/out";
  n["output"]["run_name"] = "named";
  CHECK(default_run_dir(n) == fs::path("/data/out/named"));
}
