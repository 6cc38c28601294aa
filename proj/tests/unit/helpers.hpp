#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <png.h>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "xdx/rng.hpp"
#include "xdx/tensor.hpp"

namespace testing {

inline std::vector<xdx::real> normal_values(std::size_t n, std::mt19937_64& gen) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<xdx::real> v(n);
    for (auto& x : v) x = static_cast<xdx::real>(dist(gen));
    return v;
}

inline xdx::Tensor normal_tensor(const xdx::Shape& shape, std::mt19937_64& gen, bool requires_grad = true) {
    return xdx::Tensor(shape, normal_values(xdx::numel(shape), gen), requires_grad);
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Max relative error between backward() gradients and central differences
/// (h = 1e-5) of `loss` with respect to every tensor in `inputs`.
inline double gradient_check(const std::function<xdx::Tensor()>& loss, std::vector<xdx::Tensor> inputs,
                             double h = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    loss().backward();
    double worst = 0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const xdx::real saved = values[i];
            double up = 0, down = 0;
            {
                xdx::NoGradGuard guard;
                values[i] = saved + static_cast<xdx::real>(h);
                up = loss().item();
                values[i] = saved - static_cast<xdx::real>(h);
                down = loss().item();
            }
            values[i] = saved;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
        }
    }
    return worst;
}

/// PNG bytes for an 8-bit image, written with libpng.
inline std::vector<std::uint8_t> encode_png(std::size_t width, std::size_t height, std::size_t channels,
                                            const std::vector<std::uint8_t>& pixels) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(width);
    png.height = static_cast<png_uint_32>(height);
    png.format = channels == 1 ? PNG_FORMAT_GRAY : channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr)) out.clear();
    out.resize(size);
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("xdx_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
