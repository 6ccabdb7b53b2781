#pragma once

// Fixed-budget rehearsal memory.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adrm/data_streams.hpp"
#include "adrm/rng.hpp"

namespace adrm {

enum class MemoryPolicy {
  reservoir,       // algorithm R over every candidate ever offered
  class_balanced,  // evicts the oldest entry of the largest class
};

std::string to_string(MemoryPolicy policy);
MemoryPolicy parse_memory_policy(std::string_view name);

struct MemoryEntry {
  std::vector<double> image;  // raw pixels, never augmented
  int label = 0;
  std::size_t task_id = 0;
  std::uint64_t arrival = 0;  // offer index, used by the class-balanced policy

  bool operator==(const MemoryEntry&) const = default;
};

class MemoryBuffer {
 public:
  MemoryBuffer(std::size_t budget, std::uint64_t rng_seed, MemoryPolicy policy = MemoryPolicy::reservoir);

  std::size_t budget() const noexcept { return budget_; }
  MemoryPolicy policy() const noexcept { return policy_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::uint64_t seen_count() const noexcept { return seen_; }
  const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
  /// Per-image shape [C, H, W]; empty until the first offer.
  const Shape& image_shape() const noexcept { return image_shape_; }
  const Rng& rng() const noexcept { return rng_; }

  void offer(std::span<const double> image, int label, std::size_t task_id);
  /// Offers every row of `images` in order.
  void offer_all(const Tensor& images, std::span<const int> labels, std::size_t task_id);

  /// Uniform draw: without replacement when batch_size <= size(), otherwise
  /// with replacement. Throws empty-memory on an empty buffer.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const;
  Batch sample(std::size_t batch_size, Rng& rng) const;
  Batch sample(std::size_t batch_size, std::uint64_t seed) const;
  Batch gather(std::span<const std::size_t> slots) const;

  /// Rebuilds a buffer from checkpointed state.
  static MemoryBuffer restore(std::size_t budget, MemoryPolicy policy, Shape image_shape,
                              std::vector<MemoryEntry> entries, std::uint64_t seen_count, const std::string& rng_state);

  bool operator==(const MemoryBuffer& other) const;

 private:
  std::size_t budget_;
  MemoryPolicy policy_;
  Rng rng_;
  std::uint64_t seen_ = 0;
  Shape image_shape_;
  std::vector<MemoryEntry> entries_;
};

}  // namespace adrm
