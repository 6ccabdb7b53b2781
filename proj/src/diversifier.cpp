#include "adrm/diversifier.hpp"

#include <cmath>
#include <numeric>

#include "adrm/adversarial.hpp"
#include "adrm/error.hpp"

namespace adrm {

void DiversificationSpec::validate() const {
  require(ratio >= 0.0 && ratio <= 1.0, "diversification ratio must be in [0, 1]");
  require(epsilon_low >= 0.0 && epsilon_low <= epsilon_high && std::isfinite(epsilon_high),
          "need 0 <= epsilon_low <= epsilon_high");
}

double DiversifiedBatch::fooling_rate() const {
  return size() ? static_cast<double>(fooled_idx.size()) / static_cast<double>(size()) : 0.0;
}

double DiversifiedBatch::mean_epsilon() const {
  return epsilons.empty() ? 0.0 : std::accumulate(epsilons.begin(), epsilons.end(), 0.0) / static_cast<double>(epsilons.size());
}

namespace {

Batch subset(const Tensor& images, const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  Batch b;
  b.images = images.gather_rows(idx);
  for (auto i : idx) b.labels.push_back(labels[i]);
  return b;
}

// Uniform draw of k distinct positions out of n (partial Fisher-Yates).
std::vector<std::size_t> draw(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

DiversifiedBatch diversify(const ModelState& model, const Batch& memory_batch, const DiversificationSpec& spec,
                           Rng& epsilon_rng) {
  spec.validate();
  require(memory_batch.size() > 0, "cannot diversify an empty batch");
  DiversifiedBatch out;
  out.originals = memory_batch;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < memory_batch.size(); ++i)
    out.epsilons.push_back(spec.epsilon_low + (spec.epsilon_high - spec.epsilon_low) * unit(epsilon_rng));

  out.perturbed = fgsm(model, memory_batch.images, memory_batch.labels, out.epsilons);
  const auto pred = argmax_rows(forward(model, out.perturbed).logits);
  for (std::size_t i = 0; i < pred.size(); ++i)
    (pred[i] != memory_batch.labels[i] ? out.fooled_idx : out.resisted_idx).push_back(i);
  out.fooled = subset(out.perturbed, memory_batch.labels, out.fooled_idx);
  out.resisted = subset(out.perturbed, memory_batch.labels, out.resisted_idx);
  return out;
}

DiversifiedBatch diversify(const ModelState& model, const Batch& memory_batch, const DiversificationSpec& spec) {
  Rng rng(spec.rng_seed);
  return diversify(model, memory_batch, spec, rng);
}

std::size_t diversified_quota(double ratio, std::size_t batch_size) {
  require(ratio >= 0.0 && ratio <= 1.0, "diversification ratio must be in [0, 1]");
  // The small slack keeps products such as 0.57 * 100 from rounding down.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(batch_size) + 1e-9));
}

Batch mix_rehearsal(const Batch& memory_batch, const DiversifiedBatch& diversified, double ratio, Rng& subset_rng,
                    MixCounts* counts) {
  const std::size_t quota = diversified_quota(ratio, memory_batch.size());
  if (counts) *counts = {};
  if (quota == 0) return memory_batch;

  const std::size_t k_fooled = std::min(quota, diversified.fooled.size());
  const std::size_t k_resisted = std::min(quota, diversified.resisted.size());
  const auto pick_fooled = draw(diversified.fooled.size(), k_fooled, subset_rng);
  const auto pick_resisted = draw(diversified.resisted.size(), k_resisted, subset_rng);
  const Batch f = subset(diversified.fooled.images, diversified.fooled.labels, pick_fooled);
  const Batch r = subset(diversified.resisted.images, diversified.resisted.labels, pick_resisted);

  Batch out;
  std::vector<const Tensor*> parts{&memory_batch.images};
  if (k_fooled) parts.push_back(&f.images);
  if (k_resisted) parts.push_back(&r.images);
  out.images = concat_rows(parts);
  out.labels = memory_batch.labels;
  out.labels.insert(out.labels.end(), f.labels.begin(), f.labels.end());
  out.labels.insert(out.labels.end(), r.labels.begin(), r.labels.end());
  if (counts) *counts = {k_fooled, k_resisted};
  return out;
}

}  // namespace adrm
