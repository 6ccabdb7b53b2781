#pragma once

// Dataset sources: a procedural desk-scale image set, the CIFAR-10 binary
// distribution, and a directory of images with a label manifest. Also exports
// corrupted evaluation sets to disk.

#include <cstdint>
#include <string>
#include <vector>

#include "adrm/data_streams.hpp"
#include "adrm/io.hpp"

namespace adrm {

// Procedural 10-class image set. Each class owns a colour cast, a pair of
// soft blobs and a faint oriented grating; samples jitter position, scale and
// brightness, borrow a distractor from another class and add pixel noise.
struct SyntheticSpec {
  std::size_t n_classes = 10;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t train_per_class = 300;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;
  double blob_amplitude = 0.22;
  double grating_amplitude = 0.05;
  double color_spread = 0.08;
  int max_shift = 2;
  double distractor_weight = 0.45;
  double noise_std = 0.06;
};

LabeledData make_synthetic(const SyntheticSpec& spec);

/// Reads data_batch_{1..5}.bin and test_batch.bin from a CIFAR-10 binary
/// directory. `limit_per_split` of 0 loads everything.
LabeledData load_cifar10_binary(const fs::path& dir, std::size_t limit_per_split = 0);

/// Reads `<dir>/labels.csv` with header `path,label,split`, where split is
/// `train` or `test` and each path (relative to dir) is a binary PGM/PPM
/// image or an .npy array of shape [C, H, W] in [0, 1]. All images must share
/// one shape.
LabeledData load_image_directory(const fs::path& dir);

struct CorruptionExportEntry {
  std::string kind;
  int severity = 0;
  std::uint64_t seed = 0;
  std::string file;
  std::string sha256;
};

/// Writes one .npy per (kind, severity) plus labels.npy and manifest.json
/// into `out_dir`. Returns the manifest rows.
std::vector<CorruptionExportEntry> export_corruptions(const DatasetHandle& data,
                                                      const std::vector<std::string>& kinds,
                                                      const std::vector<int>& severities, std::uint64_t seed,
                                                      const fs::path& out_dir);

}  // namespace adrm
