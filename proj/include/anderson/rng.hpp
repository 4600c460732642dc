#pragma once

#include <cstdint>
#include <random>

namespace anderson {

using Rng = std::mt19937_64;

// Deterministic sub-stream for (seed, a, b). Replica i of a run uses
// make_stream(seed, i), so results do not depend on scheduling order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(a), hi(a), lo(b), hi(b), 0x9e3779b9u};
    return Rng(seq);
}

}  // namespace anderson
