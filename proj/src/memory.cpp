#include "adrm/memory.hpp"

#include <algorithm>
#include <map>

#include "adrm/error.hpp"

namespace adrm {

std::string to_string(MemoryPolicy policy) {
  return policy == MemoryPolicy::reservoir ? "reservoir" : "class_balanced";
}

MemoryPolicy parse_memory_policy(std::string_view name) {
  if (name == "reservoir") return MemoryPolicy::reservoir;
  if (name == "class_balanced") return MemoryPolicy::class_balanced;
  fail(ErrorKind::invalid_argument, "unknown memory policy '" + std::string(name) + "'");
}

MemoryBuffer::MemoryBuffer(std::size_t budget, std::uint64_t rng_seed, MemoryPolicy policy)
    : budget_(budget), policy_(policy), rng_(rng_seed) {}

void MemoryBuffer::offer(std::span<const double> image, int label, std::size_t task_id) {
  require(!image.empty(), "cannot store an empty image");
  if (image_shape_.empty()) image_shape_ = {image.size()};  // flat unless offer_all saw the real shape
  require(image.size() == shape_size(image_shape_), "image size does not match stored images");
  require(label >= 0, "labels must be non-negative");
  const std::uint64_t arrival = seen_++;
  if (budget_ == 0) return;

  MemoryEntry entry{{image.begin(), image.end()}, label, task_id, arrival};
  if (entries_.size() < budget_) {
    entries_.push_back(std::move(entry));
    return;
  }
  if (policy_ == MemoryPolicy::reservoir) {
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const std::uint64_t j = pick(rng_);
    if (j < budget_) entries_[j] = std::move(entry);
    return;
  }
  // Class-balanced: the most represented class (smallest label on ties) gives
  // up its oldest entry, unless the newcomer's class is already that large.
  std::map<int, std::size_t> counts;
  for (const auto& e : entries_) ++counts[e.label];
  auto largest = std::ranges::max_element(counts, [](auto& a, auto& b) { return a.second < b.second; });
  const auto own = counts.find(label);
  if (own != counts.end() && own->second >= largest->second) largest = own;
  std::size_t victim = entries_.size();
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].label == largest->first && (victim == entries_.size() || entries_[i].arrival < entries_[victim].arrival))
      victim = i;
  entries_[victim] = std::move(entry);
}

void MemoryBuffer::offer_all(const Tensor& images, std::span<const int> labels, std::size_t task_id) {
  require(images.rank() >= 2 && images.dim(0) == labels.size(), "images and labels disagree in count");
  if (image_shape_.empty() && !labels.empty()) {
    image_shape_.assign(images.shape().begin() + 1, images.shape().end());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) offer(images.row(i), labels[i], task_id);
}

std::vector<std::size_t> MemoryBuffer::sample_indices(std::size_t batch_size, Rng& rng) const {
  if (entries_.empty()) fail(ErrorKind::empty_memory, "cannot sample from an empty memory buffer");
  std::vector<std::size_t> out;
  if (batch_size <= entries_.size()) {
    std::vector<std::size_t> pool(entries_.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(batch_size);
    return pool;
  }
  std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(pick(rng));
  return out;
}

Batch MemoryBuffer::gather(std::span<const std::size_t> slots) const {
  Shape shape{slots.size()};
  shape.insert(shape.end(), image_shape_.begin(), image_shape_.end());
  Batch b;
  b.images = Tensor(shape);
  const std::size_t stride = shape_size(image_shape_);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& e = entries_.at(slots[i]);
    std::ranges::copy(e.image, b.images.data() + i * stride);
    b.labels.push_back(e.label);
  }
  return b;
}

Batch MemoryBuffer::sample(std::size_t batch_size, Rng& rng) const { return gather(sample_indices(batch_size, rng)); }

Batch MemoryBuffer::sample(std::size_t batch_size, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(batch_size, rng);
}

MemoryBuffer MemoryBuffer::restore(std::size_t budget, MemoryPolicy policy, Shape image_shape,
                                   std::vector<MemoryEntry> entries, std::uint64_t seen_count,
                                   const std::string& rng_state) {
  require(entries.size() <= budget, "checkpointed memory exceeds its budget");
  require(seen_count >= entries.size(), "checkpointed memory has fewer offers than entries");
  MemoryBuffer m(budget, 0, policy);
  m.rng_ = load_rng(rng_state);
  m.seen_ = seen_count;
  m.image_shape_ = std::move(image_shape);
  for (const auto& e : entries)
    require(e.image.size() == shape_size(m.image_shape_), "checkpointed memory entry has the wrong size");
  m.entries_ = std::move(entries);
  return m;
}

bool MemoryBuffer::operator==(const MemoryBuffer& other) const {
  return budget_ == other.budget_ && policy_ == other.policy_ && rng_ == other.rng_ && seen_ == other.seen_ &&
         image_shape_ == other.image_shape_ && entries_ == other.entries_;
}

}  // namespace adrm
