#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace condsr {

using Rng = std::mt19937_64;

/// Draws `count` distinct elements of `pool` uniformly (partial Fisher-Yates).
/// The result keeps draw order; callers sort if they need a canonical set.
template <typename T>
std::vector<T> sample_without_replacement(std::span<const T> pool, std::size_t count, Rng& rng) {
    std::vector<T> scratch(pool.begin(), pool.end());
    const std::size_t take = count < scratch.size() ? count : scratch.size();
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, scratch.size() - 1);
        std::swap(scratch[i], scratch[pick(rng)]);
    }
    scratch.resize(take);
    return scratch;
}

}  // namespace condsr
