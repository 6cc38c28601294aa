#pragma once

#include <cstdint>
#include <vector>

namespace xdx {

// splitmix64 (Steele, Lea, Flood). Every seeded decision in the project goes
// through this generator so results are reproducible across platforms.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, bound) by modulo reduction; bound must be positive.
    std::uint64_t below(std::uint64_t bound) { return next() % bound; }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    float uniform_float(float lo, float hi) {
        return lo + static_cast<float>(static_cast<double>(next() >> 40) * 0x1.0p-24) * (hi - lo);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates from the back: for i = n-1 .. 1, swap(i, below(i + 1)).
template <typename T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace xdx
