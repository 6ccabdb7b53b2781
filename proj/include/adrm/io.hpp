#pragma once

// File helpers shared by the dataset loaders and the run artifacts: .npy
// arrays, SHA-256 digests and atomic text writes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adrm/tensor.hpp"

namespace adrm {

namespace fs = std::filesystem;

/// Writes a little-endian float64 .npy file.
void write_npy(const fs::path& path, const Tensor& array);
/// Writes a little-endian int64 .npy file of shape [N].
void write_npy_labels(const fs::path& path, const std::vector<int>& labels);

/// Reads a C-ordered .npy array of any common numeric dtype, converted to
/// double. Integer arrays are returned unscaled.
Tensor read_npy(const fs::path& path);
std::vector<int> read_npy_labels(const fs::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

std::string read_text(const fs::path& path);
/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
void write_text_atomic(const fs::path& path, std::string_view text);

}  // namespace adrm
