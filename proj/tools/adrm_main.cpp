// Command-line front end: train / eval / analyze runs, inspect configs and
// presets, verify run directories and export corrupted test sets.

#include <iostream>

#include "CLI11.hpp"
#include "adrm/error.hpp"
#include "adrm/run.hpp"

using namespace adrm;

namespace {

struct ConfigSource {
  std::string file;
  std::string preset_name;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd, bool positional = true) {
    if (positional)
      cmd->add_option("config", file, "JSON config file")->check(CLI::ExistingFile);
    else
      cmd->add_option("--config", file, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--preset", preset_name, "start from a named preset instead of a file");
    cmd->add_option("--set", sets, "override a field, e.g. --set train.lr=0.05 (repeatable)");
  }

  Json load() const {
    if (file.empty() == preset_name.empty()) fail(ErrorKind::invalid_argument, "give either a config file or --preset");
    Json doc = file.empty() ? preset(preset_name) : read_json(file);
    for (const auto& s : sets) apply_override(doc, s);
    return doc;
  }
};

LogFn stderr_log(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cerr << line << std::endl; };
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with adversarially diversified rehearsal memory"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", framework_version());
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no progress output");

  // train
  auto* train = app.add_subcommand("train", "train a config and write a run directory");
  ConfigSource train_src;
  train_src.attach(train);
  std::string run_dir;
  bool resume = false;
  train->add_option("--run-dir", run_dir, "write here instead of <output.root>/<run name>");
  train->add_flag("--resume", resume, "continue from the newest task checkpoint in the run directory");

  // eval
  auto* eval = app.add_subcommand("eval", "corruption and attack sweeps on a finished run");
  std::string eval_dir, model_id;
  std::vector<std::string> eval_sets;
  bool no_corruptions = false, no_attacks = false;
  eval->add_option("run_dir", eval_dir, "run directory")->required();
  eval->add_option("--set", eval_sets, "override an evaluation field, e.g. --set evaluation.attacks.epsilons=[0]");
  eval->add_flag("--no-corruptions", no_corruptions, "skip the corruption sweep");
  eval->add_flag("--no-attacks", no_attacks, "skip the adversarial sweep");
  eval->add_option("--model-id", model_id, "model id used in the tables (default: directory name)");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "CKA similarity and feature export across runs");
  std::vector<std::string> analyze_dirs;
  std::string analyze_out, cka_kind;
  std::optional<std::uint64_t> subset_seed;
  std::optional<std::size_t> subset_size;
  analyze->add_option("run_dirs", analyze_dirs, "run directories")->required();
  analyze->add_option("-o,--out", analyze_out, "output directory")->required();
  analyze->add_option("--subset-seed", subset_seed, "seed of the shared test subset");
  analyze->add_option("--subset-size", subset_size, "examples in the shared subset (0: all)");
  analyze->add_option("--cka", cka_kind, "linear or rbf")->check(CLI::IsMember({"linear", "rbf"}));

  // config inspection
  auto* validate = app.add_subcommand("validate-config", "check a config and print its normalized form");
  ConfigSource validate_src;
  validate_src.attach(validate);
  app.add_subcommand("list-presets", "names of the built-in presets");
  auto* show = app.add_subcommand("show-preset", "print a preset in normalized form");
  std::string show_name;
  show->add_option("name", show_name, "preset name")->required();
  app.add_subcommand("schema", "describe every config field");

  auto* check = app.add_subcommand("check-run", "verify checksums, config digest and CSV headers of a run");
  std::string check_dir;
  check->add_option("run_dir", check_dir, "run or analysis directory")->required();

  auto* exporter = app.add_subcommand("export-corruptions", "write corrupted copies of the test split as .npy");
  ConfigSource export_src;
  export_src.attach(exporter, false);
  std::string export_out, export_kinds, export_sev;
  exporter->add_option("-o,--out", export_out, "output directory")->required();
  exporter->add_option("--kinds", export_kinds, "comma-separated kinds (default: from the config)");
  exporter->add_option("--severities", export_sev, "comma-separated severities (default: from the config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      TrainOptions opts;
      if (!run_dir.empty()) opts.run_dir = run_dir;
      opts.resume = resume;
      opts.log = stderr_log(quiet);
      std::cout << cmd_train(train_src.load(), opts).string() << "\n";
    } else if (eval->parsed()) {
      EvalOptions opts;
      opts.overrides = eval_sets;
      opts.corruptions = !no_corruptions;
      opts.attacks = !no_attacks;
      opts.model_id = model_id;
      opts.log = stderr_log(quiet);
      const EvalTables tables = cmd_eval(eval_dir, opts);
      std::cout << tables.corruption.size() << " corruption rows, " << tables.attack.size()
                << " attack rows written to " << (fs::path(eval_dir) / "eval").string() << "\n";
    } else if (analyze->parsed()) {
      AnalyzeOptions opts;
      opts.out_dir = analyze_out;
      opts.subset_seed = subset_seed;
      opts.subset_size = subset_size;
      if (!cka_kind.empty()) opts.kind = cka_kind == "rbf" ? CkaKind::rbf : CkaKind::linear;
      opts.log = stderr_log(quiet);
      std::vector<fs::path> dirs(analyze_dirs.begin(), analyze_dirs.end());
      std::cout << cmd_analyze(dirs, opts).to_csv();
    } else if (validate->parsed()) {
      const Json normalized = normalize_config(validate_src.load());
      if (!quiet) std::cout << normalized.dump(2) << "\n";
      std::cerr << "config ok, digest " << config_digest(normalized) << "\n";
    } else if (app.got_subcommand("list-presets")) {
      for (const auto& name : preset_names()) std::cout << name << "\n";
    } else if (show->parsed()) {
      std::cout << normalize_config(preset(show_name)).dump(2) << "\n";
    } else if (app.got_subcommand("schema")) {
      std::cout << config_schema().dump(2) << "\n";
    } else if (check->parsed()) {
      const auto problems = check_run(check_dir);
      for (const auto& p : problems) std::cout << p << "\n";
      if (!problems.empty()) return 1;
      std::cout << "ok\n";
    } else if (exporter->parsed()) {
      const ExperimentConfig cfg = parse_config(normalize_config(export_src.load()));
      const LabeledData data = load_dataset(cfg.dataset);
      std::vector<std::string> kinds = export_kinds.empty() ? cfg.eval.corruption_kinds : split_list(export_kinds);
      std::vector<int> severities = cfg.eval.severities;
      if (!export_sev.empty()) {
        severities.clear();
        for (const auto& s : split_list(export_sev)) severities.push_back(std::stoi(s));
      }
      const auto entries =
          export_corruptions(data.test, kinds, severities, derive_seed(cfg.eval.seed, "corruptions"), export_out);
      std::cout << entries.size() << " arrays written to " << export_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
