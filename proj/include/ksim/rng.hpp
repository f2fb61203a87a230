#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ksim {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stream seed for (seed, a, b, ...): identical tuples give identical streams
/// regardless of the order in which streams are created.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(seed, path));
}

// Stream tags.
enum class Stream : std::uint64_t {
    init = 1,
    partition,
    noise,
    select,
    client,
    synth,
    random_embed,
    adapter_init,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace ksim
