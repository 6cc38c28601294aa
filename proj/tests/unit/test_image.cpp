#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "xdx/image.hpp"

using namespace xdx;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Image gray(std::size_t w, std::size_t h, std::vector<std::uint8_t> px) { return Image{w, h, 1, std::move(px)}; }

}  // namespace

TEST_CASE("PGM and PPM decoding") {
    const auto pgm = decode_image(bytes_of(std::string("P5\n# comment\n2 1\n255\n") + '\x05' + '\xfa'));
    CHECK(pgm.width == 2);
    CHECK(pgm.height == 1);
    CHECK(pgm.channels == 1);
    CHECK(pgm.pixels == std::vector<std::uint8_t>{5, 250});

    const auto ppm = decode_image(bytes_of(std::string("P6 1 1 255\n") + '\xff' + '\x00' + '\x00'));
    CHECK(ppm.channels == 3);
    CHECK(to_grayscale(ppm).pixels[0] == 76);  // round(0.299 * 255)

    const Image img = gray(3, 2, {0, 1, 2, 3, 4, 255});
    const auto round = decode_image(encode_pgm(img));
    CHECK(round.pixels == img.pixels);
    CHECK(round.width == 3);

    CHECK_THROWS_AS(decode_image(bytes_of("P3 1 1 255\n1")), ImageError);
    CHECK_THROWS_AS(decode_image(bytes_of("P5 2 2 255\n\x01")), ImageError);
    CHECK_THROWS_AS(decode_image(bytes_of("P5 0 2 255\n")), ImageError);
    CHECK_THROWS_AS(decode_image(bytes_of("P5 1 1 65535\n\x01\x01")), ImageError);
    CHECK_THROWS_AS(read_image("/nonexistent.pgm"), ImageError);
}

TEST_CASE("grayscale weights") {
    Image rgb{1, 1, 3, {10, 200, 30}};
    CHECK(to_grayscale(rgb).pixels[0] == static_cast<std::uint8_t>(0.299 * 10 + 0.587 * 200 + 0.114 * 30 + 0.5));
    const Image g = gray(1, 1, {42});
    CHECK(to_grayscale(g).pixels == g.pixels);
}

TEST_CASE("bilinear resize") {
    const std::vector<double> constant(35, 0.37);
    for (auto [w, h] : {std::pair{1u, 1u}, {13u, 4u}, {224u, 224u}}) {
        const auto out = resize_bilinear(constant, 7, 5, w, h);
        CHECK(out.size() == w * h);
        for (double v : out) CHECK(v == 0.37);
    }
    std::mt19937_64 gen(2);
    const auto plane = testing::normal_values(6 * 4, gen);
    const std::vector<double> p(plane.begin(), plane.end());
    CHECK(resize_bilinear(p, 6, 4, 6, 4) == p);
    // 2x2 -> 4x4: source coordinate of output i is (i + 0.5)/2 - 0.5, clamped.
    const auto up = resize_bilinear(std::vector<double>{0, 4, 8, 12}, 2, 2, 4, 4);
    CHECK(up[0] == 0);
    CHECK(up[1] == doctest::Approx(1.0));
    CHECK(up[2] == doctest::Approx(3.0));
    CHECK(up[3] == 4);
    CHECK(up[5] == doctest::Approx(0.1875 * 4 + 0.1875 * 8 + 0.0625 * 12).epsilon(1e-12));
}

TEST_CASE("preprocess") {
    const double mid = (128.0 / 255.0 - 0.449) / 0.226;
    const Tensor t = preprocess(gray(448, 448, std::vector<std::uint8_t>(448 * 448, 128)));
    CHECK(t.shape() == Shape{1, 224, 224});
    for (real v : t.data()) CHECK(v == doctest::Approx(mid).epsilon(1e-12));

    std::mt19937_64 gen(3);
    std::vector<std::uint8_t> px(224 * 224);
    for (auto& v : px) v = static_cast<std::uint8_t>(gen());
    const Tensor same = preprocess(gray(224, 224, px));
    for (std::size_t i = 0; i < px.size(); ++i)
        CHECK(same.at(i) == doctest::Approx((px[i] / 255.0 - 0.449) / 0.226).epsilon(1e-12));

    const Tensor checker = preprocess(gray(2, 2, {0, 255, 255, 0}));
    const auto [lo, hi] = std::minmax_element(checker.data().begin(), checker.data().end());
    CHECK(*lo >= (0 - 0.449) / 0.226 - 1e-12);
    CHECK(*hi <= (1 - 0.449) / 0.226 + 1e-12);

    const Tensor small = preprocess(Image{5, 3, 3, std::vector<std::uint8_t>(45, 9)}, 16);
    CHECK(small.shape() == Shape{1, 16, 16});

    const Tensor batch = preprocess_batch({gray(4, 4, std::vector<std::uint8_t>(16, 0)), gray(8, 2, std::vector<std::uint8_t>(16, 255))}, 8);
    CHECK(batch.shape() == Shape{2, 1, 8, 8});
    CHECK(batch.at(0) == doctest::Approx(-0.449 / 0.226));
    CHECK_THROWS_AS(preprocess(Image{}), ImageError);
}

TEST_CASE("PNG decoding") {
    const std::vector<std::uint8_t> gray_px{0, 10, 200, 255, 7, 99};
    const Image g = decode_image(testing::encode_png(3, 2, 1, gray_px));
    CHECK(g.width == 3);
    CHECK(g.height == 2);
    CHECK(g.channels == 1);
    CHECK(g.pixels == gray_px);

    const std::vector<std::uint8_t> rgb_px{255, 0, 0, 0, 255, 0};
    const Image c = decode_image(testing::encode_png(2, 1, 3, rgb_px));
    CHECK(c.channels == 3);
    CHECK(c.pixels == rgb_px);

    // Alpha composites onto black in linear light: half-covered white is 0.5 linear, sRGB ~188.
    const Image a = decode_image(testing::encode_png(1, 1, 4, {255, 255, 255, 128}));
    CHECK(a.channels == 3);
    CHECK(std::abs(static_cast<int>(a.pixels[0]) - 188) <= 1);

    auto truncated = testing::encode_png(3, 2, 1, gray_px);
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(decode_image(truncated), ImageError);
    CHECK_THROWS_AS(decode_image(bytes_of("\x89PNG\r\n\x1a\n garbage")), ImageError);
}
