#pragma once

#include <cstdint>
#include <random>

namespace doa {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Independent stream seed for item `index` of stream `stream` under `master`.
// Used so that per-item generation is independent of thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index);
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return Rng(derive_seed(master, stream, index));
}

// Stream tags keep the different consumers of a master seed apart.
namespace streams {
inline constexpr std::uint64_t kInit = 0x1001;
inline constexpr std::uint64_t kTrain = 0x2002;
inline constexpr std::uint64_t kValidation = 0x3003;
inline constexpr std::uint64_t kEvaluation = 0x4004;
inline constexpr std::uint64_t kOracle = 0x5005;
inline constexpr std::uint64_t kAdapt = 0x6006;
}  // namespace streams

}  // namespace doa
