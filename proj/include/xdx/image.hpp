#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xdx/tensor.hpp"

namespace xdx {

/// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Accepts binary PGM (P5) and PPM (P6) with maxval 255, and PNG (converted to
/// 8-bit gray or RGB).
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::string& path);
std::vector<std::uint8_t> encode_pgm(const Image& gray);
void write_pgm(const Image& gray, const std::string& path);

/// BT.601 luminance 0.299R + 0.587G + 0.114B, rounded to 8 bits.
Image to_grayscale(const Image& image);

/// Bilinear resize with half-pixel centers (align_corners = false), sample
/// coordinates clamped to the border.
std::vector<double> resize_bilinear(std::span<const double> plane, std::size_t width, std::size_t height,
                                    std::size_t out_width, std::size_t out_height);

struct Normalization {
    double mean = 0.449;
    double std = 0.226;
};

/// Grayscale, resize to target x target, scale to [0,1], standardize. Returns [1,target,target].
Tensor preprocess(const Image& image, std::size_t target = 224, const Normalization& norm = {});

/// Stacks [1,S,S] images into [N,1,S,S], preprocessing in parallel.
Tensor preprocess_batch(const std::vector<Image>& images, std::size_t target, const Normalization& norm = {});

}  // namespace xdx
