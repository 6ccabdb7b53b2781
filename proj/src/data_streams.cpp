#include "adrm/data_streams.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "adrm/error.hpp"
#include "adrm/rng.hpp"

namespace adrm {

InputShape DatasetHandle::input_shape() const {
  require(images.rank() == 4, "dataset images must be [N, C, H, W]");
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void DatasetHandle::validate() const {
  require(images.rank() == 4, "dataset '" + name + "': images must be [N, C, H, W]");
  require(images.dim(0) == labels.size(), "dataset '" + name + "': image/label count mismatch");
  require(n_classes >= 1, "dataset '" + name + "': no classes");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < n_classes,
            "dataset '" + name + "': label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
  for (double v : images.values())
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "dataset '" + name + "': pixel outside [0, 1]");
}

Batch take(const DatasetHandle& data, std::span<const std::size_t> indices) {
  Batch b;
  b.images = data.images.gather_rows(indices);
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) b.labels.push_back(data.labels.at(i));
  return b;
}

std::vector<std::size_t> task_class_counts(std::size_t n_classes, std::size_t n_steps) {
  require(n_steps >= 1, "n_steps must be at least 1");
  if (n_steps > n_classes)
    fail(ErrorKind::invalid_split,
         std::to_string(n_steps) + " steps cannot partition " + std::to_string(n_classes) + " classes");
  const std::size_t base = n_classes / n_steps;
  std::vector<std::size_t> counts(n_steps, base);
  counts.front() += n_classes - base * n_steps;
  return counts;
}

TaskStream make_task_stream(const LabeledData& data, std::size_t n_steps, std::uint64_t class_order_seed,
                            ClassOrder order) {
  const std::size_t k = data.train.n_classes;
  require(data.test.n_classes == k, "train and test splits disagree on the class count");
  const auto counts = task_class_counts(k, n_steps);

  TaskStream stream;
  stream.split_spec = {n_steps, counts.front(), order, class_order_seed};
  stream.class_order.resize(k);
  std::iota(stream.class_order.begin(), stream.class_order.end(), 0);
  if (order == ClassOrder::shuffled) {
    Rng rng(class_order_seed);
    std::shuffle(stream.class_order.begin(), stream.class_order.end(), rng);
  }

  std::vector<std::size_t> task_of_class(k);
  std::size_t next = 0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    Task task;
    task.task_id = t;
    for (std::size_t j = 0; j < counts[t]; ++j, ++next) {
      task.class_ids.push_back(stream.class_order[next]);
      task_of_class[static_cast<std::size_t>(stream.class_order[next])] = t;
    }
    stream.tasks.push_back(std::move(task));
  }
  for (std::size_t i = 0; i < data.train.size(); ++i)
    stream.tasks[task_of_class.at(static_cast<std::size_t>(data.train.labels[i]))].train_subset.push_back(i);
  for (std::size_t i = 0; i < data.test.size(); ++i)
    stream.tasks[task_of_class.at(static_cast<std::size_t>(data.test.labels[i]))].test_subset.push_back(i);
  return stream;
}

void relabel_in_stream_order(LabeledData& data, TaskStream& stream) {
  std::vector<int> position(stream.class_order.size());
  for (std::size_t p = 0; p < stream.class_order.size(); ++p)
    position.at(static_cast<std::size_t>(stream.class_order[p])) = static_cast<int>(p);
  for (int& y : data.train.labels) y = position.at(static_cast<std::size_t>(y));
  for (int& y : data.test.labels) y = position.at(static_cast<std::size_t>(y));
  for (Task& task : stream.tasks)
    for (int& c : task.class_ids) c = position.at(static_cast<std::size_t>(c));
  std::iota(stream.class_order.begin(), stream.class_order.end(), 0);
}

TaskStream merge_tasks(const TaskStream& stream) {
  TaskStream joint;
  joint.class_order = stream.class_order;
  Task all;
  for (const Task& t : stream.tasks) {
    all.class_ids.insert(all.class_ids.end(), t.class_ids.begin(), t.class_ids.end());
    all.train_subset.insert(all.train_subset.end(), t.train_subset.begin(), t.train_subset.end());
    all.test_subset.insert(all.test_subset.end(), t.test_subset.begin(), t.test_subset.end());
  }
  std::ranges::sort(all.train_subset);
  std::ranges::sort(all.test_subset);
  joint.split_spec = stream.split_spec;
  joint.split_spec.n_steps = 1;
  joint.split_spec.first_task_class_count = all.class_ids.size();
  joint.tasks.push_back(std::move(all));
  return joint;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.flip_prob = c.crop_prob = c.brightness_prob = c.contrast_prob = 0.0;
  return c;
}

namespace {

void require_pixels(const Tensor& images) {
  require(images.rank() == 4, "images must be [N, C, H, W], got " + shape_string(images.shape()));
  require(images.all_finite(), "images contain non-finite values");
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

double image_mean(std::span<const double> img) {
  return std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
}

}  // namespace

Tensor augment_batch(const Tensor& images, const AugmentConfig& config, std::uint64_t seed) {
  require_pixels(images);
  Tensor out = images;
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto pad = static_cast<std::ptrdiff_t>(config.crop_padding);
  std::vector<double> scratch(c * h * w);

  for (std::size_t i = 0; i < n; ++i) {
    auto img = out.row(i);
    // Draw everything up front so the random sequence does not depend on which
    // transforms fire.
    const bool flip = unit(rng) < config.flip_prob;
    const bool crop = unit(rng) < config.crop_prob && pad > 0;
    const auto dy = static_cast<std::ptrdiff_t>(unit(rng) * static_cast<double>(2 * pad + 1)) - pad;
    const auto dx = static_cast<std::ptrdiff_t>(unit(rng) * static_cast<double>(2 * pad + 1)) - pad;
    const bool bright = unit(rng) < config.brightness_prob;
    const double delta = config.brightness_low + unit(rng) * (config.brightness_high - config.brightness_low);
    const bool contrast = unit(rng) < config.contrast_prob;
    const double factor = config.contrast_low + unit(rng) * (config.contrast_high - config.contrast_low);

    if (flip) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
          auto row = img.subspan((ch * h + y) * w, w);
          std::reverse(row.begin(), row.end());
        }
    }
    if (crop && (dx != 0 || dy != 0)) {
      std::ranges::copy(img, scratch.begin());
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                sx < static_cast<std::ptrdiff_t>(w);
            img[(ch * h + y) * w + x] = inside ? scratch[(ch * h + static_cast<std::size_t>(sy)) * w +
                                                         static_cast<std::size_t>(sx)]
                                               : 0.0;
          }
    }
    if (bright)
      for (double& v : img) v = clip01(v + delta);
    if (contrast) {
      const double mean = image_mean(img);
      for (double& v : img) v = clip01((v - mean) * factor + mean);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corruptions

const std::vector<CorruptionInfo>& corruption_table() {
  static const std::vector<CorruptionInfo> table{
      {"gaussian_noise", "noise std", {0.04, 0.06, 0.08, 0.09, 0.10}, true},
      {"shot_noise", "photon count scale (lower is noisier)", {500, 250, 100, 75, 50}, true},
      {"impulse_noise", "salt-and-pepper fraction", {0.01, 0.02, 0.03, 0.05, 0.07}, true},
      {"speckle_noise", "multiplicative noise std", {0.06, 0.10, 0.12, 0.16, 0.20}, true},
      {"defocus_blur", "gaussian blur sigma (px)", {0.5, 0.75, 1.0, 1.5, 2.0}, false},
      {"motion_blur", "line kernel length (px), random direction", {2, 3, 5, 7, 9}, true},
      {"brightness", "additive shift", {0.1, 0.2, 0.3, 0.4, 0.5}, false},
      {"contrast", "contrast factor (lower is stronger)", {0.75, 0.5, 0.4, 0.3, 0.15}, false},
      {"fog", "blend weight toward a smooth haze field", {0.2, 0.3, 0.4, 0.5, 0.6}, true},
      {"pixelate", "block size (severity 1 blends 50%)", {2, 2, 4, 8, 16}, false},
      {"jpeg_compression", "max kept DCT frequency u+v in 8x8 blocks", {7, 5, 3, 2, 1}, false},
  };
  return table;
}

std::vector<std::string> corruption_kinds() {
  std::vector<std::string> kinds;
  for (const auto& info : corruption_table()) kinds.push_back(info.kind);
  return kinds;
}

bool is_corruption_kind(std::string_view kind) {
  return std::ranges::any_of(corruption_table(), [&](const CorruptionInfo& i) { return i.kind == kind; });
}

namespace {

struct Planes {
  std::size_t c, h, w;
};

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * len;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - 1 - i);
}

void gaussian_blur(std::span<double> img, Planes p, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
    const double v = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(d + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  std::vector<double> tmp(img.size());
  for (std::size_t ch = 0; ch < p.c; ++ch)
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] *
                 img[(ch * p.h + y) * p.w + mirror(static_cast<std::ptrdiff_t>(x) + d, p.w)];
        tmp[(ch * p.h + y) * p.w + x] = acc;
      }
  for (std::size_t ch = 0; ch < p.c; ++ch)
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] *
                 tmp[(ch * p.h + mirror(static_cast<std::ptrdiff_t>(y) + d, p.h)) * p.w + x];
        img[(ch * p.h + y) * p.w + x] = acc;
      }
}

void motion_blur(std::span<double> img, Planes p, std::size_t length, int direction) {
  static constexpr int kDy[] = {0, 1, 1, 1};
  static constexpr int kDx[] = {1, 1, 0, -1};
  const std::vector<double> src(img.begin(), img.end());
  const auto half = static_cast<std::ptrdiff_t>(length / 2);
  for (std::size_t ch = 0; ch < p.c; ++ch)
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < length; ++t) {
          const std::ptrdiff_t o = static_cast<std::ptrdiff_t>(t) - half;
          const std::size_t sy = mirror(static_cast<std::ptrdiff_t>(y) + o * kDy[direction], p.h);
          const std::size_t sx = mirror(static_cast<std::ptrdiff_t>(x) + o * kDx[direction], p.w);
          acc += src[(ch * p.h + sy) * p.w + sx];
        }
        img[(ch * p.h + y) * p.w + x] = acc / static_cast<double>(length);
      }
}

void pixelate(std::span<double> img, Planes p, std::size_t block, double blend) {
  const std::vector<double> src(img.begin(), img.end());
  for (std::size_t ch = 0; ch < p.c; ++ch)
    for (std::size_t by = 0; by < p.h; by += block)
      for (std::size_t bx = 0; bx < p.w; bx += block) {
        const std::size_t ey = std::min(p.h, by + block), ex = std::min(p.w, bx + block);
        double mean = 0.0;
        for (std::size_t y = by; y < ey; ++y)
          for (std::size_t x = bx; x < ex; ++x) mean += src[(ch * p.h + y) * p.w + x];
        mean /= static_cast<double>((ey - by) * (ex - bx));
        for (std::size_t y = by; y < ey; ++y)
          for (std::size_t x = bx; x < ex; ++x) {
            double& v = img[(ch * p.h + y) * p.w + x];
            v = (1.0 - blend) * v + blend * mean;
          }
      }
}

// Orthonormal DCT-II basis of size n: basis[k * n + i].
std::vector<double> dct_basis(std::size_t n) {
  std::vector<double> b(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      b[k * n + i] = alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                                      static_cast<double>(k) / (2.0 * static_cast<double>(n)));
  }
  return b;
}

// Drops DCT coefficients with u + v above `keep` inside 8x8 blocks.
void block_dct_truncate(std::span<double> img, Planes p, std::size_t keep) {
  constexpr std::size_t kBlock = 8;
  std::vector<double> block, coef;
  for (std::size_t ch = 0; ch < p.c; ++ch)
    for (std::size_t by = 0; by < p.h; by += kBlock)
      for (std::size_t bx = 0; bx < p.w; bx += kBlock) {
        const std::size_t nh = std::min(kBlock, p.h - by), nw = std::min(kBlock, p.w - bx);
        const auto bh = dct_basis(nh), bw = dct_basis(nw);
        block.assign(nh * nw, 0.0);
        coef.assign(nh * nw, 0.0);
        for (std::size_t y = 0; y < nh; ++y)
          for (std::size_t x = 0; x < nw; ++x) block[y * nw + x] = img[(ch * p.h + by + y) * p.w + bx + x];
        for (std::size_t u = 0; u < nh; ++u)
          for (std::size_t v = 0; v < nw; ++v) {
            if (u + v > keep) continue;
            double acc = 0.0;
            for (std::size_t y = 0; y < nh; ++y)
              for (std::size_t x = 0; x < nw; ++x) acc += bh[u * nh + y] * bw[v * nw + x] * block[y * nw + x];
            coef[u * nw + v] = acc;
          }
        for (std::size_t y = 0; y < nh; ++y)
          for (std::size_t x = 0; x < nw; ++x) {
            double acc = 0.0;
            for (std::size_t u = 0; u < nh; ++u)
              for (std::size_t v = 0; v < nw; ++v) acc += bh[u * nh + y] * bw[v * nw + x] * coef[u * nw + v];
            img[(ch * p.h + by + y) * p.w + bx + x] = clip01(acc);
          }
      }
}

// Smooth grey haze in [0.55, 0.95], bilinearly upsampled from a coarse grid.
std::vector<double> haze_field(Planes p, Rng& rng) {
  constexpr std::size_t kGrid = 4;
  std::uniform_real_distribution<double> level(0.55, 0.95);
  double grid[kGrid][kGrid];
  for (auto& row : grid)
    for (double& v : row) v = level(rng);
  std::vector<double> field(p.h * p.w);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      const double gy = p.h > 1 ? static_cast<double>(y) * (kGrid - 1) / static_cast<double>(p.h - 1) : 0.0;
      const double gx = p.w > 1 ? static_cast<double>(x) * (kGrid - 1) / static_cast<double>(p.w - 1) : 0.0;
      const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
      const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
      const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
      field[y * p.w + x] = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                           fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
    }
  return field;
}

const CorruptionInfo& lookup(std::string_view kind) {
  for (const auto& info : corruption_table())
    if (info.kind == kind) return info;
  fail(ErrorKind::unsupported_corruption, "unknown corruption kind '" + std::string(kind) + "'");
}

}  // namespace

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint64_t seed) {
  const CorruptionInfo& info = lookup(spec.kind);
  require(spec.severity >= 0 && spec.severity <= kMaxSeverity, "severity must be in [0, 5]");
  require_pixels(images);
  if (spec.severity == 0) return images;

  const double level = info.values[static_cast<std::size_t>(spec.severity - 1)];
  const Planes p{images.dim(1), images.dim(2), images.dim(3)};
  Tensor out = images;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::string& kind = info.kind;

  for (std::size_t i = 0; i < images.dim(0); ++i) {
    auto img = out.row(i);
    if (kind == "gaussian_noise") {
      for (double& v : img) v = clip01(v + level * normal(rng));
    } else if (kind == "shot_noise") {
      for (double& v : img) {
        std::poisson_distribution<long> photons(std::max(v * level, 1e-12));
        v = clip01(static_cast<double>(photons(rng)) / level);
      }
    } else if (kind == "impulse_noise") {
      for (double& v : img) {
        const double u = unit(rng);
        const double salt = unit(rng);
        if (u < level) v = salt < 0.5 ? 0.0 : 1.0;
      }
    } else if (kind == "speckle_noise") {
      for (double& v : img) v = clip01(v + v * level * normal(rng));
    } else if (kind == "defocus_blur") {
      gaussian_blur(img, p, level);
    } else if (kind == "motion_blur") {
      const int direction = static_cast<int>(unit(rng) * 4.0) % 4;
      motion_blur(img, p, static_cast<std::size_t>(level), direction);
    } else if (kind == "brightness") {
      for (double& v : img) v = clip01(v + level);
    } else if (kind == "contrast") {
      const double mean = image_mean(img);
      for (double& v : img) v = clip01((v - mean) * level + mean);
    } else if (kind == "fog") {
      const auto haze = haze_field(p, rng);
      for (std::size_t ch = 0; ch < p.c; ++ch)
        for (std::size_t k = 0; k < p.h * p.w; ++k) {
          double& v = img[ch * p.h * p.w + k];
          v = clip01((1.0 - level) * v + level * haze[k]);
        }
    } else if (kind == "pixelate") {
      pixelate(img, p, static_cast<std::size_t>(level), spec.severity == 1 ? 0.5 : 1.0);
    } else if (kind == "jpeg_compression") {
      block_dct_truncate(img, p, static_cast<std::size_t>(level));
    }
  }
  return out;
}

}  // namespace adrm
