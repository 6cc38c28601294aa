#pragma once

// Deterministic toy corpus: geometric patterns per class so every pipeline
// stage can be exercised without real radiographs.

#include <cstdint>
#include <string>
#include <vector>

#include "xdx/data.hpp"
#include "xdx/image.hpp"
#include "xdx/rng.hpp"

namespace xdx {

/// Number of visually distinct pattern families (stripes, disk, ring, ...).
inline constexpr std::size_t kPatternFamilies = 7;

/// Pattern `index` with random phase, contrast jitter and pixel noise.
/// Indices beyond kPatternFamilies reuse a family at a higher frequency.
Image synth_pattern(std::size_t index, std::size_t size, SplitMix64& rng);

/// Radiograph stand-in for `type`, with one bright marker per condition.
Image synth_xray(XrayType type, const std::vector<Condition>& conditions, std::size_t size, SplitMix64& rng);

/// Non-radiograph stand-in: RGB blotches and noise.
Image synth_other(std::size_t size, SplitMix64& rng);

struct CorpusOptions {
    std::size_t image_size = 32;
    std::vector<XrayType> types{XrayType::Chest, XrayType::Wrist, XrayType::Hand};
    std::size_t per_type = 20;
    std::size_t others = 0;
    /// Per-condition probability that a chest image carries the condition.
    double condition_rate = 0.3;
    std::uint64_t seed = 1;
};

/// Writes images into `dir` plus `dir/manifest.jsonl`; paths are relative to `dir`.
Manifest write_synthetic_corpus(const std::string& dir, const CorpusOptions& options);

}  // namespace xdx
