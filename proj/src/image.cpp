#include "xdx/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace xdx {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t value = 0, digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            if (++digits > 9) throw ImageError(std::string("image header: ") + what + " too large");
        }
        if (digits == 0) throw ImageError(std::string("image header: expected ") + what);
        return value;
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw ImageError("image header: missing raster");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

// libpng's simplified API: any bit depth or palette comes out as 8-bit gray or
// RGB; alpha is composited onto black.
Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw ImageError(std::string("PNG: ") + png.message);
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image img;
    img.width = png.width;
    img.height = png.height;
    img.channels = color ? 3 : 1;
    if (img.width == 0 || img.height == 0) {
        png_image_free(&png);
        throw ImageError("image has a zero dimension");
    }
    img.pixels.assign(PNG_IMAGE_SIZE(png), 0);
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr))
        throw ImageError(std::string("PNG: ") + png.message);
    return img;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= sizeof kPngSignature && std::equal(std::begin(kPngSignature), std::end(kPngSignature), bytes.begin()))
        return decode_png(bytes);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ImageError("unsupported image format (expected PNG, binary PGM P5 or PPM P6)");
    HeaderReader header(bytes);
    Image img;
    img.channels = bytes[1] == '5' ? 1 : 3;
    img.width = header.number("width");
    img.height = header.number("height");
    const std::size_t maxval = header.number("maxval");
    if (img.width == 0 || img.height == 0) throw ImageError("image has a zero dimension");
    if (maxval != 255) throw ImageError("only 8-bit images (maxval 255) are supported");
    const std::size_t start = header.raster_start();
    const std::size_t need = img.width * img.height * img.channels;
    if (bytes.size() - start < need) throw ImageError("image raster truncated");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                      bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
    return img;
}

Image read_image(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ImageError("cannot open image " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const ImageError& e) {
        throw ImageError(path + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_pgm(const Image& gray) {
    if (gray.channels != 1) throw ImageError("encode_pgm needs a single-channel image");
    const std::string header = "P5\n" + std::to_string(gray.width) + " " + std::to_string(gray.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), gray.pixels.begin(), gray.pixels.end());
    return out;
}

void write_pgm(const Image& gray, const std::string& path) {
    const auto bytes = encode_pgm(gray);
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ImageError("cannot write " + path);
    file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image to_grayscale(const Image& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) throw ImageError("unsupported channel count " + std::to_string(image.channels));
    Image gray{image.width, image.height, 1, std::vector<std::uint8_t>(image.width * image.height)};
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
        const double y = 0.299 * image.pixels[3 * i] + 0.587 * image.pixels[3 * i + 1] + 0.114 * image.pixels[3 * i + 2];
        gray.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
    }
    return gray;
}

std::vector<double> resize_bilinear(std::span<const double> plane, std::size_t width, std::size_t height,
                                    std::size_t out_width, std::size_t out_height) {
    if (width == 0 || height == 0 || out_width == 0 || out_height == 0)
        throw ImageError("resize_bilinear: zero dimension");
    if (plane.size() != width * height) throw ImageError("resize_bilinear: plane size does not match dimensions");
    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            const std::size_t hi = std::min(lo + 1, in - 1);
            t[i] = {lo, hi, src - static_cast<double>(lo)};
        }
        return t;
    };
    const auto xs = taps(width, out_width), ys = taps(height, out_height);
    std::vector<double> out(out_width * out_height);
    for (std::size_t y = 0; y < out_height; ++y) {
        const Tap& ty = ys[y];
        for (std::size_t x = 0; x < out_width; ++x) {
            const Tap& tx = xs[x];
            const double top = plane[ty.lo * width + tx.lo] * (1 - tx.frac) + plane[ty.lo * width + tx.hi] * tx.frac;
            const double bottom =
                plane[ty.hi * width + tx.lo] * (1 - tx.frac) + plane[ty.hi * width + tx.hi] * tx.frac;
            out[y * out_width + x] = top * (1 - ty.frac) + bottom * ty.frac;
        }
    }
    return out;
}

Tensor preprocess(const Image& image, std::size_t target, const Normalization& norm) {
    if (image.width == 0 || image.height == 0) throw ImageError("cannot preprocess an image with a zero dimension");
    if (target == 0) throw ImageError("preprocess target size must be positive");
    const Image gray = to_grayscale(image);
    std::vector<double> plane(gray.pixels.begin(), gray.pixels.end());
    const auto resized = resize_bilinear(plane, gray.width, gray.height, target, target);
    std::vector<real> values(resized.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = static_cast<real>((resized[i] / 255.0 - norm.mean) / norm.std);
    return Tensor({1, target, target}, std::move(values));
}

Tensor preprocess_batch(const std::vector<Image>& images, std::size_t target, const Normalization& norm) {
    const std::size_t plane = target * target;
    std::vector<real> values(images.size() * plane);
    const auto n = static_cast<std::int64_t>(images.size());
    // Each image writes its own slice; exceptions are rethrown after the loop.
    std::vector<std::string> errors(images.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const Tensor t = preprocess(images[static_cast<std::size_t>(i)], target, norm);
            std::copy(t.data().begin(), t.data().end(), values.begin() + i * static_cast<std::int64_t>(plane));
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw ImageError(e);
    return Tensor({images.size(), 1, target, target}, std::move(values));
}

}  // namespace xdx
