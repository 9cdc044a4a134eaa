#pragma once

// Deterministic random stream: xoshiro256** seeded through SplitMix64.
// Both follow their public reference algorithms, so a given seed yields the
// same stream on every platform and in every language port.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace paro {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform integer in [0, n). Rejection sampling, unbiased. n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept;
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() noexcept;

    /// Derived stream for a sub-task, e.g. a per-epoch shuffle.
    Rng fork(std::uint64_t stream) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

/// Fisher-Yates, walking from the back: swap(i, below(i + 1)).
template <typename T>
void rng_shuffle(std::span<T> items, Rng& rng) noexcept {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(items[i], items[j]);
    }
}

template <typename T>
std::vector<T> rng_shuffled(std::vector<T> items, Rng& rng) {
    rng_shuffle(std::span<T>(items), rng);
    return items;
}

}  // namespace paro
