#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace snarm {

using Rng = std::mt19937_64;

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Seed for the named substream of a root seed ("bank", "synthesis", "jitter", "init", ...).
constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    return splitmix64(root ^ fnv1a64(name));
}

inline Rng substream(std::uint64_t root, std::string_view name) { return Rng(substream_seed(root, name)); }

}  // namespace snarm
