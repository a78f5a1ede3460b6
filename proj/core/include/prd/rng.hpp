#pragma once

#include <cstdint>
#include <random>

namespace prd {

// splitmix64 step; used to derive decorrelated sub-seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic seed for a named RNG stream (tag) within a run (master seed).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    return splitmix64(splitmix64(master) ^ splitmix64(tag ^ 0xd1b54a32d192ed03ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::uint64_t tag) {
    return Rng(derive_seed(master, tag));
}

// RNG stream tags. Every stochastic component draws from its own stream so
// that enabling/disabling one feature never shifts another's draws.
namespace rng_tag {
inline constexpr std::uint64_t kNetworkInit = 1;
inline constexpr std::uint64_t kPrototypeInit = 2;
inline constexpr std::uint64_t kStreamPartition = 3;
inline constexpr std::uint64_t kBatchOrder = 4;
inline constexpr std::uint64_t kAugmentation = 5;
inline constexpr std::uint64_t kReplayDraw = 6;
inline constexpr std::uint64_t kDataGen = 7;
}  // namespace rng_tag

}  // namespace prd
