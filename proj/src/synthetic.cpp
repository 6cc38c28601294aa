#include "xdx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

namespace xdx {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Intensity in [0,1] of family `family` at normalized coordinates (u,v) in [-1,1].
double family_value(std::size_t family, double u, double v, double freq, double phase) {
    using std::numbers::pi;
    switch (family) {
        case 0: return 0.5 + 0.5 * std::sin(freq * pi * v + phase);                // horizontal stripes
        case 1: return 0.5 + 0.5 * std::sin(freq * pi * u + phase);                // vertical stripes
        case 2: return std::hypot(u, v) < 0.55 ? 1.0 : 0.0;                        // disk
        case 3: return std::abs(std::hypot(u, v) - 0.6) < 0.15 ? 1.0 : 0.0;        // ring
        case 4: return 0.5 + 0.5 * std::sin(freq * pi * (u + v) / std::numbers::sqrt2 + phase);  // diagonal
        case 5: return (std::sin(freq * pi * u + phase) * std::sin(freq * pi * v + phase)) > 0 ? 1.0 : 0.0;
        default: return (std::abs(u) < 0.2 || std::abs(v) < 0.2) ? 1.0 : 0.0;      // cross
    }
}

}  // namespace

Image synth_pattern(std::size_t index, std::size_t size, SplitMix64& rng) {
    const std::size_t family = index % kPatternFamilies;
    const double freq = 2.0 * static_cast<double>(1 + index / kPatternFamilies);
    const double phase = rng.uniform() * 2.0 * std::numbers::pi;
    const double shift_u = (rng.uniform() - 0.5) * 0.2, shift_v = (rng.uniform() - 0.5) * 0.2;
    const double low = 20 + 30 * rng.uniform(), high = 190 + 50 * rng.uniform();
    Image img{size, size, 1, std::vector<std::uint8_t>(size * size)};
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double u = (2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(size) - 1.0) + shift_u;
            const double v = (2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(size) - 1.0) + shift_v;
            const double noise = (rng.uniform() - 0.5) * 30.0;
            img.pixels[y * size + x] = to_byte(low + (high - low) * family_value(family, u, v, freq, phase) + noise);
        }
    return img;
}

Image synth_xray(XrayType type, const std::vector<Condition>& conditions, std::size_t size, SplitMix64& rng) {
    Image img = synth_pattern(static_cast<std::size_t>(type), size, rng);
    // Conditions sit on a 4x4 grid of marker sites.
    for (Condition c : conditions) {
        const auto k = static_cast<std::size_t>(c);
        const double cx = (static_cast<double>(k % 4) + 0.5) / 4.0 * static_cast<double>(size);
        const double cy = (static_cast<double>(k / 4) + 0.5) / 4.0 * static_cast<double>(size);
        const double radius = static_cast<double>(size) / 10.0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
                if (d < radius) img.pixels[y * size + x] = 255;
            }
    }
    return img;
}

Image synth_other(std::size_t size, SplitMix64& rng) {
    Image img{size, size, 3, std::vector<std::uint8_t>(size * size * 3)};
    double base[3];
    for (double& b : base) b = 255.0 * rng.uniform();
    const std::size_t cell = std::max<std::size_t>(1, size / 4);
    std::vector<double> blotch((size / cell + 1) * (size / cell + 1) * 3);
    for (double& b : blotch) b = (rng.uniform() - 0.5) * 160.0;
    const std::size_t cols = size / cell + 1;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = base[c] + blotch[((y / cell) * cols + x / cell) * 3 + c] + (rng.uniform() - 0.5) * 60.0;
                img.pixels[(y * size + x) * 3 + c] = to_byte(v);
            }
    return img;
}

Manifest write_synthetic_corpus(const std::string& dir, const CorpusOptions& options) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    SplitMix64 rng(options.seed);
    Manifest manifest;
    manifest.provenance = "synthetic corpus seed=" + std::to_string(options.seed) +
                          " size=" + std::to_string(options.image_size);
    for (XrayType type : options.types) {
        for (std::size_t i = 0; i < options.per_type; ++i) {
            SampleRecord r;
            r.stage1 = Stage1Label::xray;
            r.stage2 = type;
            std::vector<Condition> conditions;
            if (type == XrayType::Chest) {
                for (std::size_t c = 0; c < kConditionCount; ++c)
                    if (rng.uniform() < options.condition_rate) conditions.push_back(static_cast<Condition>(c));
                r.stage3 = conditions;
            }
            std::string name(name_of(type));
            std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
            r.path = name + "_" + std::to_string(i) + ".pgm";
            write_pgm(synth_xray(type, conditions, options.image_size, rng), (fs::path(dir) / r.path).string());
            manifest.records.push_back(std::move(r));
        }
    }
    for (std::size_t i = 0; i < options.others; ++i) {
        SampleRecord r;
        r.stage1 = Stage1Label::other;
        r.path = "other_" + std::to_string(i) + ".pgm";
        write_pgm(to_grayscale(synth_other(options.image_size, rng)), (fs::path(dir) / r.path).string());
        manifest.records.push_back(std::move(r));
    }
    save_manifest(manifest, (fs::path(dir) / "manifest.jsonl").string());
    return manifest;
}

}  // namespace xdx
