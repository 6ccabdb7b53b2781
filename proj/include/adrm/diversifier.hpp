#pragma once

// Adversarial diversification of rehearsal batches: per-sample FGSM, a split
// into fooled (misclassified after the perturbation) and resisted samples,
// and ratio-controlled mixing back into the rehearsal batch.

#include <cstdint>
#include <vector>

#include "adrm/data_streams.hpp"
#include "adrm/model.hpp"
#include "adrm/rng.hpp"

namespace adrm {

struct DiversificationSpec {
  double ratio = 0.1;
  double epsilon_low = 1.0 / 255;
  double epsilon_high = 16.0 / 255;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct DiversifiedBatch {
  Batch originals;
  Tensor perturbed;                  // same order as originals
  std::vector<double> epsilons;      // one per sample
  std::vector<std::size_t> fooled_idx;
  std::vector<std::size_t> resisted_idx;
  Batch fooled;
  Batch resisted;

  std::size_t size() const noexcept { return originals.size(); }
  double fooling_rate() const;
  double mean_epsilon() const;
};

/// Draws one epsilon per sample from `epsilon_rng`, applies FGSM against the
/// frozen model and routes each perturbed sample by its new prediction.
DiversifiedBatch diversify(const ModelState& model, const Batch& memory_batch, const DiversificationSpec& spec,
                           Rng& epsilon_rng);
DiversifiedBatch diversify(const ModelState& model, const Batch& memory_batch, const DiversificationSpec& spec);

/// Number of samples each subset may contribute: floor(ratio * batch_size).
std::size_t diversified_quota(double ratio, std::size_t batch_size);

struct MixCounts {
  std::size_t fooled = 0;
  std::size_t resisted = 0;
};

/// memory_batch followed by min(quota, |fooled|) fooled samples and
/// min(quota, |resisted|) resisted samples, each drawn without replacement.
/// With ratio 0 the memory batch is returned untouched and `subset_rng` is
/// not advanced.
Batch mix_rehearsal(const Batch& memory_batch, const DiversifiedBatch& diversified, double ratio, Rng& subset_rng,
                    MixCounts* counts = nullptr);

}  // namespace adrm
