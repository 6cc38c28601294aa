#include <doctest.h>

#include "helpers.hpp"
#include "xdx/explain.hpp"

using namespace xdx;

namespace {

std::span<real> values_of(Network& net, const std::string& name) {
    for (auto& [n, t] : net.named_tensors())
        if (n == name) return t.mutable_data();
    throw std::out_of_range(name);
}

std::vector<real> snapshot(const Network& net) {
    std::vector<real> out;
    for (const auto& [n, t] : net.named_tensors()) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST_CASE("combine_activations hand oracle") {
    // alpha_0 = mean(0.5, 0.5, 0.5, -0.5) = 0.25, alpha_1 = 0.2.
    // 0.25*[1,2,3,-4] + 0.2*[0,0,2,0] = [0.25, 0.5, 1.15, -1] -> ReLU -> / 1.15.
    const Tensor a({2, 2, 2}, {1, 2, 3, -4, 0, 0, 2, 0});
    const Tensor g({2, 2, 2}, {0.5, 0.5, 0.5, -0.5, 0.2, 0.2, 0.2, 0.2});
    const Heatmap h = combine_activations(a, g, "x");
    CHECK(h.width == 2);
    CHECK(h.height == 2);
    CHECK(h.target_class == "x");
    CHECK(h.raw_max == doctest::Approx(1.15).epsilon(1e-12));
    const double expected[] = {0.25 / 1.15, 0.5 / 1.15, 1.0, 0.0};
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(h.values[i] - expected[i]) <= 1e-12);

    const Heatmap neg = combine_activations(Tensor({1, 2, 2}, {1, 1, 1, 1}), Tensor({1, 2, 2}, {-1, -1, -1, -1}));
    CHECK(neg.raw_max == 0);
    for (double v : neg.values) CHECK(v == 0);
    CHECK_THROWS_AS(combine_activations(a, Tensor({2, 2, 1}, {0, 0, 0, 0})), ShapeError);
}

TEST_CASE("grad_cam on toy networks") {
    const auto spec = NetworkSpec::toy(HeadSpec::softmax(3));
    std::mt19937_64 gen(31);

    SUBCASE("values lie in [0,1] and the network is untouched") {
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            const Network net = build_network(spec, seed);
            const auto before = snapshot(net);
            const Tensor x = testing::normal_tensor({1, 32, 32}, gen, false);
            const Heatmap h = grad_cam(net, x, seed % 3);
            CHECK(h.width == 4);
            CHECK(h.height == 4);
            CHECK(h.values.size() == 16);
            bool any = false;
            for (double v : h.values) {
                CHECK(v >= 0);
                CHECK(v <= 1);
                any = any || v > 0;
            }
            CHECK(any == (h.raw_max > 0));
            CHECK(snapshot(net) == before);
        }
    }
    SUBCASE("a head that ignores the features gives the zero map") {
        Network net = build_network(spec, 4);
        for (auto& v : values_of(net, "classifier.weight")) v = 0;
        const Heatmap h = grad_cam(net, testing::normal_tensor({1, 1, 32, 32}, gen, false), 1);
        CHECK(h.raw_max == 0);
        for (double v : h.values) CHECK(v == 0);
    }
    SUBCASE("scaling the target logit leaves the map unchanged") {
        Network net = build_network(spec, 5);
        const Tensor x = testing::normal_tensor({1, 32, 32}, gen, false);
        const Heatmap base = grad_cam(net, x, 2);
        auto w = values_of(net, "classifier.weight");
        for (std::size_t i = 2 * 16; i < 3 * 16; ++i) w[i] *= 4;
        values_of(net, "classifier.bias")[2] *= 4;
        const Heatmap scaled = grad_cam(net, x, 2);
        CHECK(scaled.raw_max == doctest::Approx(4 * base.raw_max).epsilon(1e-12));
        for (std::size_t i = 0; i < base.values.size(); ++i)
            CHECK(std::abs(scaled.values[i] - base.values[i]) <= 1e-12);
    }
    SUBCASE("errors") {
        const Network net = build_network(spec, 6);
        CHECK_THROWS_AS(grad_cam(net, Tensor::zeros({1, 32, 32}), 3), std::out_of_range);
        CHECK_THROWS_AS(grad_cam(net, Tensor::zeros({2, 1, 32, 32}), 0), ShapeError);
    }
}

TEST_CASE("heatmap upsampling") {
    Heatmap h{2, 2, {0, 1, 0.5, 0.25}, "", 1};
    const auto up = upsample_heatmap(h, 4);
    REQUIRE(up.size() == 16);
    // Top row interpolates 0..1 at x = -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
    CHECK(up[0] == 0);
    CHECK(up[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(up[2] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(up[3] == 1);
    // y = 0.25: 0.75 * top(0.25) + 0.25 * bottom(0.25) = 0.75*0.25 + 0.25*0.4375.
    CHECK(up[5] == doctest::Approx(0.296875).epsilon(1e-12));
    for (double v : up) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }

    for (double v : upsample_heatmap(Heatmap{1, 1, {0.6}, "", 1}, 224)) CHECK(v == 0.6);
    for (double v : upsample_heatmap(Heatmap{3, 3, std::vector<double>(9, 0.3), "", 1}, 7)) CHECK(v == 0.3);
    CHECK_THROWS_AS(upsample_heatmap(h, 1), std::invalid_argument);

    const auto j = heatmap_to_json(h, true);
    CHECK(j["width"] == 2);
    CHECK(j["values"].size() == 4);
    CHECK(j.contains("raw_max"));
    CHECK_FALSE(heatmap_to_json(h).contains("raw_max"));
    CHECK(heatmap_to_image(h).pixels == std::vector<std::uint8_t>{0, 255, 128, 64});
}
