#pragma once

#include <cstdint>
#include <random>

namespace bnnfer {

using Rng = std::mt19937_64;

// splitmix64 finalizer. Used to derive independent stream seeds from one
// base seed: derive_seed(base, stream) never depends on evaluation order.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    return mix64(mix64(base) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

// Named streams so that initialization, shuffling and mask draws of one
// training run never share random numbers.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    train_masks = 3,
    mc_sampling = 4,
    data = 5,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
    return Rng(derive_seed(seed, static_cast<std::uint64_t>(stream)));
}

}  // namespace bnnfer
