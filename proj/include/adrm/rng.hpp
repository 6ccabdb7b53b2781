#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace adrm {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from a base.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(base) ^ (stream * 0xd1b54a32d192ed03ULL));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept;

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& state);

}  // namespace adrm
