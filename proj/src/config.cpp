#include "adrm/config.hpp"

#include <cmath>

#include <functional>
#include <map>

#include "adrm/error.hpp"
#include "adrm/io.hpp"

namespace adrm {

namespace {

Json synthetic_defaults() {
  const SyntheticSpec s;
  return {{"n_classes", s.n_classes},
          {"channels", s.channels},
          {"height", s.height},
          {"width", s.width},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"seed", s.seed},
          {"blob_amplitude", s.blob_amplitude},
          {"grating_amplitude", s.grating_amplitude},
          {"color_spread", s.color_spread},
          {"max_shift", s.max_shift},
          {"distractor_weight", s.distractor_weight},
          {"noise_std", s.noise_std}};
}

Json augmentation_defaults() {
  const AugmentConfig a;
  return {{"flip_prob", a.flip_prob},         {"crop_prob", a.crop_prob},
          {"crop_padding", a.crop_padding},   {"brightness_prob", a.brightness_prob},
          {"brightness_low", a.brightness_low}, {"brightness_high", a.brightness_high},
          {"contrast_prob", a.contrast_prob}, {"contrast_low", a.contrast_low},
          {"contrast_high", a.contrast_high}};
}

Json build_defaults() {
  const TrainConfig t;
  Json train = {{"architecture", t.architecture},
                {"mode", to_string(t.mode)},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"momentum", t.momentum},
                {"lr_decay", t.lr_decay},
                {"milestones", t.milestones},
                {"epochs_first", t.epochs_first},
                {"epochs_rest", t.epochs_rest},
                {"memory_budget", t.memory_budget},
                {"memory_policy", to_string(t.memory_policy)},
                {"offer_timing", to_string(t.offer_timing)},
                {"augment", t.augment},
                {"augment_diversified", t.augment_diversified},
                {"augmentation", augmentation_defaults()},
                {"diversification",
                 {{"ratio", t.diversification.ratio},
                  {"epsilon_low", t.diversification.epsilon_low},
                  {"epsilon_high", t.diversification.epsilon_high}}}};
  Json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["name"] = "custom";
  doc["dataset"] = {{"source", "synthetic"}, {"path", ""}, {"limit_per_split", 0}, {"synthetic", synthetic_defaults()}};
  doc["stream"] = {{"n_steps", 5}, {"class_order", "natural"}, {"class_order_seed", 0}};
  doc["train"] = train;
  doc["seeds"] = {{"data", 0}, {"init", 0}, {"memory", 0}, {"diversify", 0}, {"eval", 0}};
  doc["evaluation"] = {
      {"corruptions", {{"kinds", corruption_kinds()}, {"severities", {0, 1, 2, 3, 4, 5}}}},
      {"attacks",
       {{"kinds", {"fgsm", "pgd_linf", "pgd_l2"}},
        {"epsilons", {0.0, 2.0 / 255, 4.0 / 255, 8.0 / 255, 16.0 / 255}},
        {"pgd_steps", 10}}},
      {"max_examples", 0},
      {"analysis_subset", 2000},
      {"cka", "linear"}};
  doc["output"] = {{"root", ""}, {"run_name", ""}};
  return doc;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Checks `value` against the shape of `like` (a default value).
void check_type(const Json& like, const Json& value, const std::string& path) {
  auto mismatch = [&] {
    throw SchemaError(path, std::string("expected ") + type_name(like) + ", got " + type_name(value));
  };
  if (like.is_boolean() && !value.is_boolean()) mismatch();
  if (like.is_string() && !value.is_string()) mismatch();
  if (like.is_number_float() && !value.is_number()) mismatch();
  if (like.is_number_integer()) {
    if (!value.is_number_integer()) mismatch();
    if (value.get<std::int64_t>() < 0 && like.get<std::int64_t>() >= 0)
      throw SchemaError(path, "must be non-negative");
  }
  if (like.is_array()) {
    if (!value.is_array()) mismatch();
    const Json& elem = like.empty() ? Json() : like.front();
    for (std::size_t i = 0; i < value.size(); ++i)
      if (!elem.is_null()) check_type(elem, value[i], path + "[" + std::to_string(i) + "]");
  }
}

void merge(Json& base, const Json& doc, const std::string& path) {
  if (!doc.is_object()) throw SchemaError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string p = join(path, key);
    if (!base.contains(key)) throw SchemaError(p, "unknown key");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, p);
    } else {
      check_type(slot, value, p);
      slot = value;
    }
  }
}

template <typename T>
T field(const Json& doc, const std::string& path) {
  const Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    node = &node->at(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return node->get<T>();
}

// Runs a parse step and re-labels its error with the field path.
template <typename F>
auto at_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(path, e.what());
  }
}

void check(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw SchemaError(path, message);
}

}  // namespace

const Json& default_config_json() {
  static const Json defaults = build_defaults();
  return defaults;
}

Json config_schema() {
  static const std::map<std::string, std::string> notes{
      {"schema_version", "must equal 1"},
      {"dataset.source", "synthetic | cifar10 | directory"},
      {"dataset.path", "CIFAR-10 binary directory, or image directory with labels.csv"},
      {"dataset.limit_per_split", "cap on examples per split (0 = all); cifar10 only"},
      {"stream.class_order", "natural | shuffled"},
      {"train.architecture", "linear | mlp | small-cnn | resnet32"},
      {"train.mode", "finetune | joint | er | adrm"},
      {"train.milestones", "lr decay points as fractions of each task's epochs"},
      {"train.memory_policy", "reservoir | class_balanced"},
      {"train.offer_timing", "after_task | per_step"},
      {"train.diversification.ratio", "r in [0, 1]; floor(r * batch) samples from each of fooled/resisted"},
      {"train.diversification.epsilon_low", "per-sample epsilon ~ U(low, high), pixel units"},
      {"evaluation.corruptions.kinds", "any of: gaussian_noise, shot_noise, impulse_noise, speckle_noise, "
                                       "defocus_blur, motion_blur, brightness, contrast, fog, pixelate, "
                                       "jpeg_compression"},
      {"evaluation.corruptions.severities", "integers in [0, 5]"},
      {"evaluation.attacks.kinds", "fgsm | pgd_linf | pgd_l2"},
      {"evaluation.max_examples", "test examples used by eval (0 = all)"},
      {"evaluation.analysis_subset", "examples in the seeded CKA subset"},
      {"evaluation.cka", "linear | rbf"},
      {"output.root", "run directory parent; empty uses $ADRM_OUTPUT_ROOT, then ./runs"},
      {"output.run_name", "empty uses <name>-<first 12 hex digits of the config digest>"},
  };
  Json schema;
  std::function<void(const Json&, const std::string&)> walk = [&](const Json& node, const std::string& path) {
    for (const auto& [key, value] : node.items()) {
      const std::string p = join(path, key);
      if (value.is_object()) {
        walk(value, p);
        continue;
      }
      Json entry = {{"type", type_name(value)}, {"default", value}};
      if (auto it = notes.find(p); it != notes.end()) entry["note"] = it->second;
      schema[p] = entry;
    }
  };
  walk(default_config_json(), "");
  return {{"schema_version", kConfigSchemaVersion}, {"fields", schema}};
}

Json normalize_config(const Json& doc) {
  Json out = default_config_json();
  Json input = doc;
  // "seed" is shorthand for setting every training/eval seed at once.
  if (input.is_object() && input.contains("seed")) {
    check(input["seed"].is_number_integer() && input["seed"].get<std::int64_t>() >= 0, "seed", "expected a non-negative integer");
    for (auto& [k, v] : out["seeds"].items()) v = input["seed"];
    input.erase("seed");
  }
  merge(out, input, "");
  check(out["schema_version"] == kConfigSchemaVersion, "schema_version",
        "unsupported schema version " + out["schema_version"].dump());
  parse_config(out);  // range and enum checks
  return out;
}

ExperimentConfig parse_config(const Json& d) {
  ExperimentConfig c;
  c.name = field<std::string>(d, "name");
  check(!c.name.empty() && c.name.find('/') == std::string::npos, "name", "must be a non-empty file-name-safe string");

  auto& ds = c.dataset;
  ds.source = field<std::string>(d, "dataset.source");
  check(ds.source == "synthetic" || ds.source == "cifar10" || ds.source == "directory", "dataset.source",
        "must be synthetic, cifar10 or directory");
  ds.path = field<std::string>(d, "dataset.path");
  check(ds.source == "synthetic" || !ds.path.empty(), "dataset.path", "required for " + ds.source);
  ds.limit_per_split = field<std::size_t>(d, "dataset.limit_per_split");
  auto& s = ds.synthetic;
  const Json& sj = d.at("dataset").at("synthetic");
  s.n_classes = sj.at("n_classes");
  s.channels = sj.at("channels");
  s.height = sj.at("height");
  s.width = sj.at("width");
  s.train_per_class = sj.at("train_per_class");
  s.test_per_class = sj.at("test_per_class");
  s.seed = sj.at("seed");
  s.blob_amplitude = sj.at("blob_amplitude");
  s.grating_amplitude = sj.at("grating_amplitude");
  s.color_spread = sj.at("color_spread");
  s.max_shift = sj.at("max_shift");
  s.distractor_weight = sj.at("distractor_weight");
  s.noise_std = sj.at("noise_std");
  check(s.n_classes >= 2, "dataset.synthetic.n_classes", "needs at least 2 classes");
  check(s.height >= 4 && s.width >= 4 && s.channels >= 1, "dataset.synthetic", "images must be at least 4x4");
  check(s.train_per_class >= 1 && s.test_per_class >= 1, "dataset.synthetic", "needs examples per class");

  c.stream.n_steps = field<std::size_t>(d, "stream.n_steps");
  check(c.stream.n_steps >= 1, "stream.n_steps", "must be at least 1");
  const auto order = field<std::string>(d, "stream.class_order");
  check(order == "natural" || order == "shuffled", "stream.class_order", "must be natural or shuffled");
  c.stream.class_order = order == "natural" ? ClassOrder::natural : ClassOrder::shuffled;
  c.stream.class_order_seed = field<std::uint64_t>(d, "stream.class_order_seed");

  auto& t = c.train;
  const Json& tj = d.at("train");
  t.architecture = tj.at("architecture");
  check(std::ranges::count(supported_architectures(), t.architecture) == 1, "train.architecture",
        "unsupported architecture '" + t.architecture + "'");
  t.mode = at_path("train.mode", [&] { return parse_train_mode(tj.at("mode").get<std::string>()); });
  t.batch_size = tj.at("batch_size");
  t.lr = tj.at("lr");
  t.momentum = tj.at("momentum");
  t.lr_decay = tj.at("lr_decay");
  t.milestones = tj.at("milestones").get<std::vector<double>>();
  t.epochs_first = tj.at("epochs_first");
  t.epochs_rest = tj.at("epochs_rest");
  t.memory_budget = tj.at("memory_budget");
  t.memory_policy =
      at_path("train.memory_policy", [&] { return parse_memory_policy(tj.at("memory_policy").get<std::string>()); });
  t.offer_timing =
      at_path("train.offer_timing", [&] { return parse_offer_timing(tj.at("offer_timing").get<std::string>()); });
  t.augment = tj.at("augment");
  t.augment_diversified = tj.at("augment_diversified");
  const Json& aj = tj.at("augmentation");
  t.augmentation = {aj.at("flip_prob"),       aj.at("crop_prob"),     aj.at("crop_padding"),
                    aj.at("brightness_prob"), aj.at("brightness_low"), aj.at("brightness_high"),
                    aj.at("contrast_prob"),   aj.at("contrast_low"),  aj.at("contrast_high")};
  const Json& dj = tj.at("diversification");
  t.diversification.ratio = dj.at("ratio");
  t.diversification.epsilon_low = dj.at("epsilon_low");
  t.diversification.epsilon_high = dj.at("epsilon_high");
  const Json& seeds = d.at("seeds");
  t.seeds = {seeds.at("data"), seeds.at("init"), seeds.at("memory"), seeds.at("diversify")};
  t.diversification.rng_seed = t.seeds.diversify;
  check(t.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(std::isfinite(t.lr) && t.lr > 0, "train.lr", "must be positive");
  check(t.momentum >= 0 && t.momentum < 1, "train.momentum", "must be in [0, 1)");
  check(t.lr_decay > 0 && t.lr_decay <= 1, "train.lr_decay", "must be in (0, 1]");
  check(t.epochs_first >= 1, "train.epochs_first", "must be at least 1");
  check(t.epochs_rest >= 1, "train.epochs_rest", "must be at least 1");
  check(t.diversification.ratio >= 0 && t.diversification.ratio <= 1, "train.diversification.ratio",
        "must be in [0, 1]");
  check(t.diversification.epsilon_low >= 0 && t.diversification.epsilon_low <= t.diversification.epsilon_high,
        "train.diversification.epsilon_low", "must satisfy 0 <= epsilon_low <= epsilon_high");
  at_path("train.diversification", [&] { t.diversification.validate(); });
  at_path("train", [&] { t.validate(); });

  auto& e = c.eval;
  const Json& ej = d.at("evaluation");
  e.corruption_kinds = ej.at("corruptions").at("kinds").get<std::vector<std::string>>();
  for (const auto& k : e.corruption_kinds)
    check(is_corruption_kind(k), "evaluation.corruptions.kinds", "unknown corruption kind '" + k + "'");
  e.severities = ej.at("corruptions").at("severities").get<std::vector<int>>();
  for (int sv : e.severities)
    check(sv >= 0 && sv <= kMaxSeverity, "evaluation.corruptions.severities", "severity must be in [0, 5]");
  for (const auto& k : ej.at("attacks").at("kinds"))
    e.attack_kinds.push_back(at_path("evaluation.attacks.kinds", [&] { return parse_attack_kind(k.get<std::string>()); }));
  e.epsilons = ej.at("attacks").at("epsilons").get<std::vector<double>>();
  for (double eps : e.epsilons) check(eps >= 0.0, "evaluation.attacks.epsilons", "epsilons must be non-negative");
  e.pgd_steps = ej.at("attacks").at("pgd_steps");
  check(e.pgd_steps >= 1, "evaluation.attacks.pgd_steps", "must be at least 1");
  e.max_examples = ej.at("max_examples");
  e.analysis_subset = ej.at("analysis_subset");
  check(e.analysis_subset >= 2, "evaluation.analysis_subset", "CKA needs at least 2 examples");
  const auto cka = ej.at("cka").get<std::string>();
  check(cka == "linear" || cka == "rbf", "evaluation.cka", "must be linear or rbf");
  e.cka = cka == "linear" ? CkaKind::linear : CkaKind::rbf;
  e.seed = seeds.at("eval");

  c.output_root = field<std::string>(d, "output.root");
  c.run_name = field<std::string>(d, "output.run_name");
  check(c.run_name.find('/') == std::string::npos, "output.run_name", "must not contain '/'");
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

namespace {

Json desk(const std::string& name, const std::string& mode, double ratio = 0.1) {
  Json doc = {{"name", name},
              {"dataset", {{"source", "synthetic"}}},
              {"stream", {{"n_steps", 5}}},
              {"train",
               {{"architecture", "small-cnn"},
                {"mode", mode},
                {"batch_size", 64},
                {"epochs_first", 10},
                {"epochs_rest", 5},
                {"memory_budget", 200}}}};
  if (mode == "adrm") doc["train"]["diversification"] = {{"ratio", ratio}};
  return doc;
}

Json full_cifar(const std::string& name, const std::string& mode, double ratio = 0.1) {
  Json doc = {{"name", name},
              {"dataset", {{"source", "cifar10"}, {"path", "data/cifar-10-batches-bin"}}},
              {"stream", {{"n_steps", 5}}},
              {"train",
               {{"architecture", "resnet32"},
                {"mode", mode},
                {"batch_size", 256},
                {"epochs_first", 200},
                {"epochs_rest", 128},
                {"memory_budget", 1024},
                {"augment", true}}}};
  if (mode == "adrm") doc["train"]["diversification"] = {{"ratio", ratio}};
  return doc;
}

const std::vector<std::pair<std::string, Json>>& preset_table() {
  static const std::vector<std::pair<std::string, Json>> table = [] {
    std::vector<std::pair<std::string, Json>> t;
    auto add = [&](const Json& doc) { t.emplace_back(doc["name"].get<std::string>(), doc); };
    add(desk("desk-er", "er"));
    for (int r : {10, 25, 50, 75, 100}) add(desk("desk-adrm-r" + std::to_string(r), "adrm", r / 100.0));
    add(desk("desk-finetune", "finetune"));
    add(desk("desk-joint", "joint"));
    add(full_cifar("full-cifar-er", "er"));
    for (int r : {10, 25, 50, 75, 100}) add(full_cifar("full-cifar-adrm-r" + std::to_string(r), "adrm", r / 100.0));
    add(full_cifar("full-cifar-finetune", "finetune"));
    add(full_cifar("full-cifar-joint", "joint"));
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, doc] : preset_table()) names.push_back(name);
  return names;
}

Json preset(const std::string& name) {
  for (const auto& [n, doc] : preset_table())
    if (n == name) return doc;
  fail(ErrorKind::invalid_argument, "unknown preset '" + name + "'");
}

std::string config_digest(const Json& normalized) { return sha256_hex(normalized.dump()); }

std::string dataset_digest(const Json& normalized) {
  const Json part = {{"dataset", normalized.at("dataset")}, {"stream", normalized.at("stream")}};
  return sha256_hex(part.dump());
}

LabeledData load_dataset(const DatasetConfig& config) {
  LabeledData d;
  if (config.source == "synthetic") d = make_synthetic(config.synthetic);
  else if (config.source == "cifar10") d = load_cifar10_binary(config.path, config.limit_per_split);
  else if (config.source == "directory") d = load_image_directory(config.path);
  else fail(ErrorKind::invalid_argument, "unknown dataset source '" + config.source + "'");
  d.train.validate();
  d.test.validate();
  require(d.train.n_classes == d.test.n_classes, "train and test splits disagree on the class count");
  return d;
}

}  // namespace adrm
