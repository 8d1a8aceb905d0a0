#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace l96uq {

/// Engine used for every random stream in the project.
using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t z) noexcept;

/// FNV-1a hash of a stream name.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Counter-based sub-stream derivation.
///
/// The master seed fans out to named streams ("nature", "obs",
/// "init-ensemble", "nn-init", "shuffle", "bootstrap") and, inside a
/// stream, to independent work items by index:
///
///   seed = mix(mix(mix(master + golden) ^ fnv1a(stream)) ^ (index * golden + 1))
///
/// Work items never share engine state, so the values drawn for item k do
/// not depend on how many threads run or in which order items complete.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index = 0) noexcept;

inline Rng make_rng(std::uint64_t master, std::string_view stream,
                    std::uint64_t index = 0) {
  return Rng{derive_seed(master, stream, index)};
}

}  // namespace l96uq
