#include "adrm/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "adrm/error.hpp"
#include "adrm/rng.hpp"
#include "json.hpp"

namespace adrm {

namespace {

struct ClassStyle {
  std::vector<double> tint;  // per channel
  struct Blob {
    double cy, cx, radius;
    std::vector<double> amplitude;  // per channel, signed
  };
  std::vector<Blob> blobs;
  double angle = 0.0, frequency = 0.0, phase = 0.0;
  std::vector<double> grating_sign;
};

ClassStyle make_style(const SyntheticSpec& spec, std::size_t cls) {
  Rng rng(derive_seed(spec.seed, "class-" + std::to_string(cls)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassStyle s;
  for (std::size_t c = 0; c < spec.channels; ++c) s.tint.push_back(0.5 + spec.color_spread * (2 * u(rng) - 1));
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  for (int b = 0; b < 2; ++b) {
    ClassStyle::Blob blob{h * (0.2 + 0.6 * u(rng)), w * (0.2 + 0.6 * u(rng)), std::min(h, w) * (0.12 + 0.12 * u(rng)), {}};
    for (std::size_t c = 0; c < spec.channels; ++c) blob.amplitude.push_back((u(rng) < 0.5 ? -1 : 1) * (0.5 + 0.5 * u(rng)));
    s.blobs.push_back(std::move(blob));
  }
  // Spread grating orientations and frequencies evenly so classes differ.
  s.angle = std::numbers::pi * (static_cast<double>(cls) + 0.5 * u(rng)) / static_cast<double>(spec.n_classes);
  s.frequency = 2.0 * std::numbers::pi * (2.0 + static_cast<double>(cls % 3)) / w;
  s.phase = 2.0 * std::numbers::pi * u(rng);
  for (std::size_t c = 0; c < spec.channels; ++c) s.grating_sign.push_back(u(rng) < 0.5 ? -1.0 : 1.0);
  return s;
}

// Adds `weight` times the class pattern (blobs and grating), shifted by
// (dy, dx), into img.
void draw_pattern(std::span<double> img, const SyntheticSpec& spec, const ClassStyle& s, double weight, double dy,
                  double dx) {
  const std::size_t hw = spec.height * spec.width;
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double py = static_cast<double>(y) - dy, px = static_cast<double>(x) - dx;
      const double wave = std::sin(s.frequency * (px * std::cos(s.angle) + py * std::sin(s.angle)) + s.phase);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        double v = spec.grating_amplitude * s.grating_sign[c] * wave;
        for (const auto& b : s.blobs) {
          const double d2 = (py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx);
          v += spec.blob_amplitude * b.amplitude[c] * std::exp(-d2 / (2 * b.radius * b.radius));
        }
        img[c * hw + y * spec.width + x] += weight * v;
      }
    }
}

DatasetHandle synth_split(const SyntheticSpec& spec, const std::vector<ClassStyle>& styles, std::size_t per_class,
                          Split split) {
  DatasetHandle d;
  d.name = "synthetic";
  d.split = split;
  d.n_classes = spec.n_classes;
  const std::size_t n = per_class * spec.n_classes;
  d.images = Tensor({n, spec.channels, spec.height, spec.width});
  d.labels.resize(n);
  Rng rng(derive_seed(spec.seed, split == Split::train ? "train" : "test"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  const std::size_t hw = spec.height * spec.width;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.n_classes;  // interleaved classes
    d.labels[i] = static_cast<int>(cls);
    auto img = d.images.row(i);
    const ClassStyle& s = styles[cls];
    const double brightness = 0.1 * (2 * u(rng) - 1);
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (std::size_t k = 0; k < hw; ++k) img[c * hw + k] = s.tint[c] + brightness;
    auto shift = [&] { return static_cast<double>(spec.max_shift) * (2 * u(rng) - 1); };
    const double scale = 0.7 + 0.6 * u(rng);
    const double dy = shift(), dx = shift();
    draw_pattern(img, spec, s, scale, dy, dx);
    auto other = static_cast<std::size_t>(u(rng) * static_cast<double>(spec.n_classes - 1));
    if (other >= cls) ++other;
    const double dweight = spec.distractor_weight * u(rng);
    const double ody = shift(), odx = shift();
    draw_pattern(img, spec, styles[other], dweight, ody, odx);
    for (double& v : img) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  return d;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  const std::string s = read_text(path);
  return {s.begin(), s.end()};
}

void load_cifar_files(const std::vector<fs::path>& files, std::size_t limit, DatasetHandle& out) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<double> values;
  for (const auto& f : files) {
    const auto bytes = read_bytes(f);
    if (bytes.size() % kRecord != 0) fail(ErrorKind::io_error, f.string() + " is not a CIFAR-10 batch file");
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      if (limit && out.labels.size() >= limit) break;
      const unsigned char* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) fail(ErrorKind::io_error, f.string() + ": label out of range");
      out.labels.push_back(rec[0]);
      for (std::size_t k = 1; k < kRecord; ++k) values.push_back(rec[k] / 255.0);
    }
  }
  out.n_classes = 10;
  out.images = Tensor({out.labels.size(), 3, 32, 32}, std::move(values));
}

// Binary PGM (P5) or PPM (P6), maxval < 256.
Tensor read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::artifact_not_found, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") fail(ErrorKind::io_error, path.string() + ": only binary PGM/PPM is supported");
  auto next_int = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    std::size_t v = 0;
    if (!(in >> v)) fail(ErrorKind::io_error, path.string() + ": malformed header");
    return v;
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval == 0 || maxval > 255) fail(ErrorKind::io_error, path.string() + ": unsupported maxval");
  in.get();
  const std::size_t c = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(w * h * c);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    fail(ErrorKind::io_error, path.string() + ": truncated pixel data");
  Tensor img({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        img[(ch * h + y) * w + x] = raw[(y * w + x) * c + ch] / static_cast<double>(maxval);
  return img;
}

}  // namespace

LabeledData make_synthetic(const SyntheticSpec& spec) {
  require(spec.n_classes >= 2 && spec.channels >= 1 && spec.height >= 4 && spec.width >= 4,
          "synthetic dataset needs at least 2 classes and 4x4 images");
  require(spec.train_per_class >= 1 && spec.test_per_class >= 1, "synthetic dataset needs examples per class");
  std::vector<ClassStyle> styles;
  for (std::size_t c = 0; c < spec.n_classes; ++c) styles.push_back(make_style(spec, c));
  return {synth_split(spec, styles, spec.train_per_class, Split::train),
          synth_split(spec, styles, spec.test_per_class, Split::test)};
}

LabeledData load_cifar10_binary(const fs::path& dir, std::size_t limit_per_split) {
  std::vector<fs::path> train_files;
  for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  for (const auto& f : train_files)
    if (!fs::exists(f)) fail(ErrorKind::artifact_not_found, "missing CIFAR-10 file " + f.string());
  if (!fs::exists(dir / "test_batch.bin")) fail(ErrorKind::artifact_not_found, "missing CIFAR-10 test_batch.bin");
  LabeledData d;
  d.train.name = d.test.name = "cifar10";
  d.test.split = Split::test;
  load_cifar_files(train_files, limit_per_split, d.train);
  load_cifar_files({dir / "test_batch.bin"}, limit_per_split, d.test);
  return d;
}

LabeledData load_image_directory(const fs::path& dir) {
  std::istringstream csv(read_text(dir / "labels.csv"));
  std::string line;
  std::getline(csv, line);
  if (line.rfind("path,label,split", 0) != 0)
    fail(ErrorKind::io_error, "labels.csv must start with the header path,label,split");
  LabeledData d;
  d.train.name = d.test.name = dir.filename().string();
  d.test.split = Split::test;
  std::vector<double> train_px, test_px;
  Shape image_shape;
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line.back() == '\r') line.pop_back();
    std::stringstream row(line);
    std::string path, label, split;
    std::getline(row, path, ',');
    std::getline(row, label, ',');
    std::getline(row, split, ',');
    int y = 0;
    try {
      y = std::stoi(label);
    } catch (const std::exception&) {
      fail(ErrorKind::io_error, "labels.csv line " + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    if (y < 0) fail(ErrorKind::io_error, "labels.csv line " + std::to_string(line_no) + ": negative label");
    if (split != "train" && split != "test")
      fail(ErrorKind::io_error, "labels.csv line " + std::to_string(line_no) + ": split must be train or test");
    const fs::path file = dir / path;
    Tensor img = file.extension() == ".npy" ? read_npy(file) : read_pnm(file);
    if (img.rank() != 3) fail(ErrorKind::io_error, file.string() + ": expected a [C, H, W] image");
    if (image_shape.empty()) image_shape = img.shape();
    if (img.shape() != image_shape)
      fail(ErrorKind::io_error, file.string() + ": shape " + shape_string(img.shape()) + " differs from " +
                                    shape_string(image_shape));
    auto& px = split == "train" ? train_px : test_px;
    px.insert(px.end(), img.values().begin(), img.values().end());
    (split == "train" ? d.train : d.test).labels.push_back(y);
    max_label = std::max(max_label, y);
  }
  if (d.train.labels.empty() || d.test.labels.empty())
    fail(ErrorKind::io_error, "labels.csv needs at least one train and one test image");
  for (auto* h : {&d.train, &d.test}) {
    h->n_classes = static_cast<std::size_t>(max_label + 1);
    Shape s{h->labels.size()};
    s.insert(s.end(), image_shape.begin(), image_shape.end());
    h->images = Tensor(s, h == &d.train ? std::move(train_px) : std::move(test_px));
  }
  return d;
}

std::vector<CorruptionExportEntry> export_corruptions(const DatasetHandle& data,
                                                      const std::vector<std::string>& kinds,
                                                      const std::vector<int>& severities, std::uint64_t seed,
                                                      const fs::path& out_dir) {
  for (const auto& k : kinds)
    if (!is_corruption_kind(k)) fail(ErrorKind::unsupported_corruption, "unknown corruption kind '" + k + "'");
  fs::create_directories(out_dir);
  write_npy_labels(out_dir / "labels.npy", data.labels);
  std::vector<CorruptionExportEntry> rows;
  nlohmann::json manifest;
  manifest["dataset"] = data.name;
  manifest["n"] = data.size();
  manifest["labels"] = {{"file", "labels.npy"}, {"sha256", sha256_file(out_dir / "labels.npy")}};
  manifest["entries"] = nlohmann::json::array();
  for (const auto& kind : kinds)
    for (int severity : severities) {
      CorruptionExportEntry e;
      e.kind = kind;
      e.severity = severity;
      e.seed = derive_seed(seed, kind + "/" + std::to_string(severity));
      e.file = kind + "_s" + std::to_string(severity) + ".npy";
      write_npy(out_dir / e.file, corrupt(data.images, {kind, severity}, e.seed));
      e.sha256 = sha256_file(out_dir / e.file);
      manifest["entries"].push_back(
          {{"kind", e.kind}, {"severity", e.severity}, {"seed", e.seed}, {"file", e.file}, {"sha256", e.sha256}});
      rows.push_back(std::move(e));
    }
  write_text_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return rows;
}

}  // namespace adrm
