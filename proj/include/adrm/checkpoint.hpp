#pragma once

// Versioned checkpoint container: a JSON header (architecture, layout,
// counters, memory bookkeeping, config digest) followed by raw float64
// payloads for parameters, buffers and stored memory images.

#include <string>

#include "adrm/io.hpp"
#include "adrm/trainer.hpp"

namespace adrm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  StreamState state;
  std::string config_digest;
};

void save_checkpoint(const fs::path& path, const StreamState& state, const std::string& config_digest);
/// Throws artifact-not-found for a missing file and io-error for a damaged one.
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace adrm
