#include "adrm/run.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "adrm/checkpoint.hpp"
#include "adrm/error.hpp"

#ifndef ADRM_VERSION
#define ADRM_VERSION "0.0.0"
#endif

namespace adrm {

namespace {

constexpr const char* kMetricsHeader =
    "step,task,epoch,lr,current_size,rehearsal_size,current_loss,rehearsal_loss,total_loss";
constexpr const char* kDiversifierHeader =
    "step,task,memory_batch,fooled,resisted,added_fooled,added_resisted,mean_epsilon,fooling_rate";
constexpr const char* kCorruptionHeader = "model_id,kind,severity,accuracy,n";
constexpr const char* kAttackHeader = "model_id,attack,epsilon,accuracy,n,seed";

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void say(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::string metrics_line(const StepRecord& r) {
  return fmt("%zu,%zu,%zu,%.10g,%zu,%zu,%.10g,%.10g,%.10g\n", r.step, r.task, r.epoch, r.lr, r.current_size,
             r.rehearsal_size, r.current_loss, r.rehearsal_loss, r.total_loss);
}

std::string diversifier_line(const DiversifierRecord& r) {
  return fmt("%zu,%zu,%zu,%zu,%zu,%zu,%zu,%.10g,%.10g\n", r.step, r.task, r.memory_batch, r.fooled, r.resisted,
             r.added_fooled, r.added_resisted, r.mean_epsilon, r.fooling_rate);
}

// Exclusive-create lock file; released when the guard goes out of scope.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) fail(ErrorKind::io_error, "run directory is locked by another writer: " + dir.string());
    std::fprintf(f, "%s\n", now_utc().c_str());
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

std::string relative_name(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

// Every regular file except the manifest and lock, with its checksum.
Json checksum_artifacts(const fs::path& run_dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "manifest.json" || name == ".lock" || name.ends_with(".tmp")) continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Json out = Json::object();
  for (const auto& f : files) out[relative_name(f, run_dir)] = sha256_file(f);
  return out;
}

void write_manifest(const fs::path& run_dir, Json& manifest) {
  manifest["updated"] = now_utc();
  manifest["artifacts"] = checksum_artifacts(run_dir);
  write_text_atomic(run_dir / "manifest.json", manifest.dump(2) + "\n");
}

struct PreparedData {
  LabeledData data;
  TaskStream stream;
};

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData p{load_dataset(cfg.dataset), {}};
  p.stream = make_task_stream(p.data, cfg.stream.n_steps, cfg.stream.class_order_seed, cfg.stream.class_order);
  relabel_in_stream_order(p.data, p.stream);
  return p;
}

// Sorted seeded subset of `n_total` indices; everything when `limit` is 0 or
// not smaller than the split.
std::vector<std::size_t> seeded_subset(std::size_t n_total, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n_total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n_total) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < limit; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::optional<fs::path> newest_task_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!name.starts_with("task_") || !name.ends_with(".ckpt")) continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

// Rows of a CSV written by an earlier attempt whose step is below `limit`.
std::string kept_rows(const fs::path& path, std::size_t limit) {
  if (!fs::exists(path)) return {};
  std::istringstream in(read_text(path));
  std::string line, out;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < limit) out += line + "\n";
  }
  return out;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

Json load_run_config(const fs::path& run_dir) {
  const fs::path path = run_dir / "config.json";
  if (!fs::exists(path)) fail(ErrorKind::artifact_not_found, "no config.json in " + run_dir.string());
  return read_json(path);
}

Json load_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) fail(ErrorKind::artifact_not_found, "no manifest.json in " + run_dir.string());
  return read_json(path);
}

void require_completed(const fs::path& run_dir) {
  const Json manifest = load_manifest(run_dir);
  const Json* train = manifest.contains("phases") && manifest["phases"].contains("train") ? &manifest["phases"]["train"]
                                                                                          : nullptr;
  if (!train || train->value("status", "") != "completed")
    fail(ErrorKind::artifact_not_found, "training has not completed in " + run_dir.string());
  if (!fs::exists(run_dir / "checkpoints" / "final.ckpt"))
    fail(ErrorKind::artifact_not_found, "checkpoint not found: " + (run_dir / "checkpoints" / "final.ckpt").string());
}

}  // namespace

std::string framework_version() { return ADRM_VERSION; }

Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::schema_error, path.string() + ": " + e.what());
  }
}

const std::vector<std::pair<std::string, std::string>>& csv_schemas() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"metrics.csv", kMetricsHeader},
      {"diversifier.csv", kDiversifierHeader},
      {"eval/corruption_sweep.csv", kCorruptionHeader},
      {"eval/adversarial_sweep.csv", kAttackHeader},
  };
  return table;
}

fs::path default_run_dir(const Json& normalized) {
  fs::path root = normalized.at("output").at("root").get<std::string>();
  if (root.empty()) {
    const char* env = std::getenv(kOutputRootEnv);
    root = env && *env ? fs::path(env) : fs::path("runs");
  }
  std::string name = normalized.at("output").at("run_name").get<std::string>();
  if (name.empty()) name = normalized.at("name").get<std::string>() + "-" + config_digest(normalized).substr(0, 12);
  return root / name;
}

fs::path cmd_train(const Json& doc, const TrainOptions& options) {
  const Json normalized = normalize_config(doc);
  const ExperimentConfig cfg = parse_config(normalized);
  const std::string digest = config_digest(normalized);
  const fs::path run_dir = options.run_dir ? *options.run_dir : default_run_dir(normalized);
  fs::create_directories(run_dir);
  RunLock lock(run_dir);

  const fs::path config_path = run_dir / "config.json";
  const fs::path ckpt_dir = run_dir / "checkpoints";
  if (fs::exists(config_path)) {
    if (config_digest(read_json(config_path)) != digest)
      fail(ErrorKind::invalid_argument, "run directory " + run_dir.string() + " holds a different config");
  }
  std::optional<Checkpoint> resume_from;
  if (options.resume) {
    if (auto newest = newest_task_checkpoint(ckpt_dir)) {
      resume_from = load_checkpoint(*newest);
      if (resume_from->config_digest != digest)
        fail(ErrorKind::incompatible_runs, newest->string() + " was written under a different config");
      say(options.log, "resuming from " + newest->string());
    }
  }
  std::string metrics_rows, diversifier_rows;
  if (resume_from) {
    metrics_rows = kept_rows(run_dir / "metrics.csv", resume_from->state.global_step);
    diversifier_rows = kept_rows(run_dir / "diversifier.csv", resume_from->state.global_step);
  } else {
    // A fresh run replaces whatever an earlier attempt left behind.
    for (const char* stale : {"accuracy_matrix.csv", "metrics.csv", "diversifier.csv", "manifest.json"})
      fs::remove(run_dir / stale);
    fs::remove_all(ckpt_dir);
    fs::remove_all(run_dir / "eval");
  }
  fs::create_directories(ckpt_dir);
  write_text_atomic(config_path, normalized.dump(2) + "\n");

  Json manifest = {{"framework", {{"name", "adrm"}, {"version", framework_version()}}},
                   {"name", cfg.name},
                   {"config_digest", digest},
                   {"dataset_digest", dataset_digest(normalized)},
                   {"created", now_utc()},
                   {"phases", Json::object()}};
  if (resume_from && fs::exists(run_dir / "manifest.json")) {
    Json old = read_json(run_dir / "manifest.json");
    if (old.contains("created")) manifest["created"] = old["created"];
  }
  manifest["phases"]["train"] = {{"status", "running"}, {"started", now_utc()}};
  write_manifest(run_dir, manifest);

  const bool with_diversifier = cfg.train.mode == TrainMode::adrm;
  auto flush_logs = [&] {
    write_text_atomic(run_dir / "metrics.csv", std::string(kMetricsHeader) + "\n" + metrics_rows);
    if (with_diversifier)
      write_text_atomic(run_dir / "diversifier.csv", std::string(kDiversifierHeader) + "\n" + diversifier_rows);
  };

  try {
    PreparedData prepared = prepare_data(cfg);
    std::size_t n_tasks = cfg.train.mode == TrainMode::joint ? 1 : prepared.stream.tasks.size();
    TrainObserver observer;
    observer.on_step = [&](const StepRecord& r) { metrics_rows += metrics_line(r); };
    observer.on_diversify = [&](const DiversifierRecord& r) { diversifier_rows += diversifier_line(r); };
    std::size_t global_step = resume_from ? resume_from->state.global_step : 0;
    observer.on_task_end = [&](const StreamState& s) {
      global_step = s.global_step;
      const std::size_t t = s.next_task - 1;
      save_checkpoint(ckpt_dir / fmt("task_%03zu.ckpt", t), s, digest);
      write_text_atomic(run_dir / "accuracy_matrix.csv", s.matrix.to_csv());
      flush_logs();
      manifest["phases"]["train"]["tasks_completed"] = s.next_task;
      write_manifest(run_dir, manifest);
      std::string row;
      for (std::size_t i = 0; i <= t; ++i) row += fmt(" %.4f", s.matrix.at(t, i));
      say(options.log, fmt("task %zu/%zu done, step %zu, accuracy:", t + 1, n_tasks, s.global_step) + row);
    };
    std::optional<StreamState> resume_state;
    if (resume_from) resume_state = std::move(resume_from->state);
    RunResult result = run_stream(prepared.data, prepared.stream, cfg.train, observer, std::move(resume_state));

    StreamState final_state;
    final_state.next_task = result.matrix.n_tasks();
    final_state.global_step = global_step;
    final_state.model = std::move(result.model);
    final_state.memory = std::move(result.memory);
    final_state.matrix = result.matrix;
    save_checkpoint(ckpt_dir / "final.ckpt", final_state, digest);
    write_text_atomic(run_dir / "accuracy_matrix.csv", result.matrix.to_csv());
    flush_logs();
    manifest["phases"]["train"]["status"] = "completed";
    manifest["phases"]["train"]["finished"] = now_utc();
    manifest["phases"]["train"]["aca"] = aca(result.matrix);
    write_manifest(run_dir, manifest);
    say(options.log, fmt("ACA %.4f", aca(result.matrix)));
  } catch (const Error& e) {
    flush_logs();
    Json& phase = manifest["phases"]["train"];
    phase["status"] = "failed";
    phase["finished"] = now_utc();
    phase["error"] = {{"kind", to_string(e.kind())}, {"message", e.what()}};
    if (const auto* tf = dynamic_cast<const TrainingFailure*>(&e)) phase["failed_step"] = tf->step();
    write_manifest(run_dir, manifest);
    throw;
  }
  return run_dir;
}

EvalTables cmd_eval(const fs::path& run_dir, const EvalOptions& options) {
  Json doc = load_run_config(run_dir);
  require_completed(run_dir);
  for (const auto& o : options.overrides) apply_override(doc, o);
  const Json normalized = normalize_config(doc);
  const ExperimentConfig cfg = parse_config(normalized);
  const Checkpoint ck = load_checkpoint(run_dir / "checkpoints" / "final.ckpt");
  const std::string model_id = options.model_id.empty() ? run_dir.filename().string() : options.model_id;

  RunLock lock(run_dir);
  Json manifest = load_manifest(run_dir);
  manifest["phases"]["eval"] = {{"status", "running"}, {"started", now_utc()}};
  write_manifest(run_dir, manifest);

  EvalTables tables;
  try {
    PreparedData prepared = prepare_data(cfg);
    const DatasetHandle& test = prepared.data.test;
    const auto idx = seeded_subset(test.size(), cfg.eval.max_examples, derive_seed(cfg.eval.seed, "eval-subset"));
    const Batch batch = take(test, idx);
    say(options.log, fmt("evaluating %s on %zu test examples", model_id.c_str(), batch.labels.size()));
    fs::create_directories(run_dir / "eval");
    if (options.corruptions && !cfg.eval.corruption_kinds.empty()) {
      tables.corruption = corruption_sweep(ck.state.model, batch.images, batch.labels, cfg.eval.corruption_kinds,
                                           cfg.eval.severities, derive_seed(cfg.eval.seed, "corruptions"), model_id);
      write_text_atomic(run_dir / "eval" / "corruption_sweep.csv", corruption_csv(tables.corruption));
    }
    if (options.attacks && !cfg.eval.attack_kinds.empty()) {
      tables.attack = adversarial_sweep(ck.state.model, batch.images, batch.labels, cfg.eval.attack_kinds,
                                        cfg.eval.epsilons, derive_seed(cfg.eval.seed, "attacks"), model_id,
                                        cfg.eval.pgd_steps);
      write_text_atomic(run_dir / "eval" / "adversarial_sweep.csv", attack_csv(tables.attack));
    }
  } catch (const Error& e) {
    manifest["phases"]["eval"]["status"] = "failed";
    manifest["phases"]["eval"]["error"] = {{"kind", to_string(e.kind())}, {"message", e.what()}};
    write_manifest(run_dir, manifest);
    throw;
  }
  manifest["phases"]["eval"]["status"] = "completed";
  manifest["phases"]["eval"]["finished"] = now_utc();
  manifest["phases"]["eval"]["examples"] = tables.corruption.empty() && tables.attack.empty()
                                               ? 0
                                               : (tables.attack.empty() ? tables.corruption.front().n
                                                                        : tables.attack.front().n);
  write_manifest(run_dir, manifest);
  return tables;
}

SimilarityMatrix cmd_analyze(const std::vector<fs::path>& run_dirs, const AnalyzeOptions& options) {
  require(!run_dirs.empty(), "analyze needs at least one run directory");
  require(!options.out_dir.empty(), "analyze needs an output directory");

  std::vector<fs::path> runs;
  std::set<fs::path> seen;
  for (const auto& dir : run_dirs) {
    if (!fs::exists(dir)) fail(ErrorKind::artifact_not_found, "run directory not found: " + dir.string());
    if (seen.insert(fs::canonical(dir)).second) runs.push_back(dir);
  }

  std::vector<Json> configs;
  for (const auto& dir : runs) {
    require_completed(dir);
    configs.push_back(normalize_config(load_run_config(dir)));
  }
  const std::string shared = dataset_digest(configs.front());
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (dataset_digest(configs[i]) != shared)
      fail(ErrorKind::incompatible_runs, runs[i].string() + " was trained on a different dataset than " +
                                             runs.front().string());

  const ExperimentConfig first = parse_config(configs.front());
  const std::uint64_t seed = options.subset_seed.value_or(first.eval.seed);
  const std::size_t size = options.subset_size.value_or(first.eval.analysis_subset);
  const CkaKind kind = options.kind.value_or(first.eval.cka);
  PreparedData prepared = prepare_data(first);
  const auto idx = seeded_subset(prepared.data.test.size(), size, derive_seed(seed, "analysis-subset"));
  const Batch batch = take(prepared.data.test, idx);
  say(options.log, fmt("extracting features for %zu runs on %zu examples", runs.size(), batch.labels.size()));

  std::vector<FeatureMatrix> features;
  std::map<std::string, int> id_uses;
  for (const auto& dir : runs) {
    std::string id = dir.filename().string();
    if (id.empty()) id = dir.parent_path().filename().string();
    if (int n = id_uses[id]++; n > 0) id += "-" + std::to_string(n + 1);
    const Checkpoint ck = load_checkpoint(dir / "checkpoints" / "final.ckpt");
    features.push_back(extract_features(ck.state.model, batch.images, batch.labels, id));
  }
  const SimilarityMatrix sim = similarity_matrix(features, kind);

  const fs::path out = options.out_dir;
  fs::create_directories(out / "features");
  write_text_atomic(out / "cka_matrix.csv", sim.to_csv());
  Json manifest = {{"framework", {{"name", "adrm"}, {"version", framework_version()}}},
                   {"created", now_utc()},
                   {"dataset_digest", shared},
                   {"subset_seed", seed},
                   {"subset_size", batch.labels.size()},
                   {"cka", kind == CkaKind::linear ? "linear" : "rbf"},
                   {"models", Json::array()}};
  write_npy_labels(out / "features" / "labels.npy", batch.labels);
  for (std::size_t i = 0; i < features.size(); ++i) {
    write_npy(out / "features" / (features[i].model_id + ".npy"), features[i].features);
    manifest["models"].push_back({{"model_id", features[i].model_id},
                                  {"run_dir", fs::absolute(runs[i]).lexically_normal().string()},
                                  {"layer_id", features[i].layer_id},
                                  {"features", "features/" + features[i].model_id + ".npy"}});
  }
  manifest["phases"] = {{"analyze", {{"status", "completed"}}}};
  write_manifest(out, manifest);
  return sim;
}

std::vector<std::string> check_run(const fs::path& run_dir) {
  std::vector<std::string> problems;
  if (!fs::is_directory(run_dir)) return {"not a directory: " + run_dir.string()};
  Json manifest;
  try {
    manifest = load_manifest(run_dir);
  } catch (const Error& e) {
    return {e.what()};
  }

  if (manifest.contains("artifacts")) {
    for (const auto& [name, sum] : manifest["artifacts"].items()) {
      const fs::path p = run_dir / name;
      if (!fs::exists(p))
        problems.push_back("missing artifact: " + name);
      else if (sha256_file(p) != sum.get<std::string>())
        problems.push_back("checksum mismatch: " + name);
    }
  } else {
    problems.push_back("manifest has no artifact list");
  }

  if (fs::exists(run_dir / "config.json")) {
    if (manifest.value("config_digest", "") != config_digest(read_json(run_dir / "config.json")))
      problems.push_back("config.json does not match the manifest's config digest");
  }

  for (const auto& [name, header] : csv_schemas()) {
    const fs::path p = run_dir / name;
    if (fs::exists(p) && first_line(read_text(p)) != header) problems.push_back("bad header in " + name);
  }
  if (fs::exists(run_dir / "accuracy_matrix.csv")) {
    try {
      const AccuracyMatrix m = AccuracyMatrix::from_csv(read_text(run_dir / "accuracy_matrix.csv"));
      if (m.to_csv() != read_text(run_dir / "accuracy_matrix.csv"))
        problems.push_back("accuracy_matrix.csv is not in canonical form");
    } catch (const Error& e) {
      problems.push_back(std::string("accuracy_matrix.csv: ") + e.what());
    }
  }
  if (fs::exists(run_dir / "cka_matrix.csv")) {
    const std::string header = first_line(read_text(run_dir / "cka_matrix.csv"));
    if (!header.starts_with("model_id")) problems.push_back("bad header in cka_matrix.csv");
  }
  return problems;
}

}  // namespace adrm
