#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xdx/model.hpp"
#include "xdx/optim.hpp"
#include "xdx/tensor.hpp"

using namespace xdx;
using testing::gradient_check;
using testing::normal_tensor;

namespace {

// Direct 6-nested-loop cross-correlation with zero padding.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0), ks = k.dim(2);
    const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
    std::vector<double> out(co * oh * ow, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t ky = 0; ky < ks; ++ky)
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                            const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            out[(o * oh + y) * ow + xx] +=
                                x.at((c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) *
                                k.at(((o * ci + c) * ks + ky) * ks + kx);
                        }
    return out;
}

}  // namespace

TEST_CASE("tensor construction checks element count") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<real>(5)), ShapeError);
    const Tensor t = Tensor::zeros({2, 3}, true);
    CHECK(t.numel() == 6);
    CHECK_FALSE(t.has_grad());
    CHECK(t.grad().empty());
}

TEST_CASE("backward basics") {
    SUBCASE("x*x at 3 gives 6") {
        Tensor x = Tensor::scalar(3, true);
        mul(x, x).backward();
        CHECK(x.grad()[0] == doctest::Approx(6.0));
    }
    SUBCASE("sum of sigmoid at zero gives 0.25 each") {
        Tensor x = Tensor::zeros({4}, true);
        sum(sigmoid(x)).backward();
        for (real g : x.grad()) CHECK(g == doctest::Approx(0.25));
    }
    SUBCASE("repeated backward accumulates") {
        Tensor x = Tensor::scalar(3, true);
        mul(x, x).backward();
        mul(x, x).backward();
        CHECK(x.grad()[0] == doctest::Approx(12.0));
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0);
    }
    SUBCASE("non-scalar loss rejected") {
        Tensor x = Tensor::zeros({3}, true);
        CHECK_THROWS_AS(relu(x).backward(), ShapeError);
    }
    SUBCASE("unused parameter keeps an exactly zero gradient") {
        Tensor a = Tensor::full({2}, 1.5, true), b = Tensor::full({2}, 2.0, true);
        Tensor both = add(sum(a), scale(sum(b), 0));
        both.backward();
        for (real g : b.grad()) CHECK(g == 0.0);
        Tensor c = Tensor::full({2}, 2.0, true);
        sum(a).backward();
        CHECK(std::all_of(c.grad().begin(), c.grad().end(), [](real g) { return g == 0.0; }));
    }
    SUBCASE("shared subexpression visited once per path") {
        Tensor x = Tensor::scalar(2, true);
        Tensor y = mul(x, x);
        add(y, y).backward();  // d(2x^2)/dx = 4x
        CHECK(x.grad()[0] == doctest::Approx(8.0));
    }
    SUBCASE("no-grad scope records nothing") {
        Tensor x = Tensor::scalar(2, true);
        Tensor y;
        {
            NoGradGuard guard;
            y = mul(x, x);
        }
        CHECK_FALSE(y.requires_grad());
        {
            NoGradGuard guard;
            EnableGradGuard on;
            CHECK(grad_enabled());
        }
        CHECK(grad_enabled());
    }
    SUBCASE("detach shares values and drops history") {
        Tensor x = Tensor::full({2}, 1.0, true);
        Tensor y = scale(x, 2);
        Tensor d = y.detach();
        CHECK_FALSE(d.requires_grad());
        CHECK(d.data()[0] == 2.0);
        Tensor c = x.clone();
        c.mutable_data()[0] = 7;
        CHECK(x.data()[0] == 1.0);
    }
}

TEST_CASE("activations") {
    const Tensor r = relu(Tensor({3}, {-1, 0, 2}));
    CHECK(std::vector<real>(r.data().begin(), r.data().end()) == std::vector<real>{0, 0, 2});
    CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
    const Tensor s = softmax(Tensor({2}, {0, 0}));
    CHECK(s.at(0) == 0.5);
    CHECK(s.at(1) == 0.5);
    CHECK(stable_sigmoid(-800) >= 0);
    CHECK(std::isfinite(stable_sigmoid(-800)));
    CHECK(stable_sigmoid(800) == 1.0);
    CHECK(activation(Activation::relu, Tensor::scalar(-3)).item() == 0);

    std::mt19937_64 gen(11);
    for (int i = 0; i < 50; ++i) {
        const Tensor x = scale(normal_tensor({4, 7}, gen, false), 30);
        const Tensor p = softmax(x);
        for (std::size_t row = 0; row < 4; ++row) {
            double total = 0;
            for (std::size_t c = 0; c < 7; ++c) total += p.at(row * 7 + c);
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("conv2d examples") {
    SUBCASE("identity kernel") {
        const Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
        const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, {1}), std::nullopt, 1, 0);
        CHECK(y.shape() == Shape{1, 3, 3});
        CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
    }
    SUBCASE("constant case") {
        const Tensor y = conv2d(Tensor::full({1, 3, 3}, 1), Tensor::full({1, 1, 2, 2}, 1), std::nullopt, 1, 0);
        CHECK(y.shape() == Shape{1, 2, 2});
        for (real v : y.data()) CHECK(v == 4);
    }
    SUBCASE("random instance matches direct loops") {
        std::mt19937_64 gen(5);
        for (int i = 0; i < 20; ++i) {
            const Tensor x = normal_tensor({2, 5, 5}, gen, false), k = normal_tensor({3, 2, 3, 3}, gen, false);
            const Tensor y = conv2d(x, k, std::nullopt, 2, 1);
            REQUIRE(y.shape() == Shape{3, 3, 3});
            const auto expected = naive_conv(x, k, 2, 1);
            for (std::size_t j = 0; j < expected.size(); ++j) CHECK(y.at(j) == doctest::Approx(expected[j]).epsilon(1e-12));
        }
    }
    SUBCASE("same padding preserves spatial shape") {
        for (std::size_t k : {1u, 3u, 5u, 7u}) {
            const Tensor y = conv2d(Tensor::zeros({2, 9, 11}), Tensor::zeros({4, 2, k, k}), std::nullopt, 1, (k - 1) / 2);
            CHECK(y.shape() == Shape{4, 9, 11});
        }
    }
    SUBCASE("bias is added per output channel") {
        const Tensor y = conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({2, 1, 1, 1}), Tensor({2}, {1, -1}), 1, 0);
        CHECK(y.at(0) == 1);
        CHECK(y.at(7) == -1);
    }
    SUBCASE("mismatches name the dimension") {
        CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 3, 3}), Tensor::zeros({1, 3, 1, 1}), std::nullopt, 1, 0), ShapeError);
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), std::nullopt, 1, 0), ShapeError);
        try {
            conv2d(Tensor::zeros({2, 3, 3}), Tensor::zeros({1, 3, 1, 1}), std::nullopt, 1, 0);
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("C_in") != std::string::npos);
        }
    }
}

TEST_CASE("pool2d examples") {
    const Tensor x({1, 2, 2}, {1, 2, 3, 4});
    CHECK(pool2d(x, PoolKind::average, 2, 2).item() == 2.5);
    CHECK(pool2d(x, PoolKind::max, 2, 2).item() == 4);

    std::vector<real> ramp(16);
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<real>(i);
    const Tensor avg = pool2d(Tensor({1, 4, 4}, ramp), PoolKind::average, 2, 2);
    REQUIRE(avg.shape() == Shape{1, 2, 2});
    for (std::size_t oy = 0; oy < 2; ++oy)
        for (std::size_t ox = 0; ox < 2; ++ox) {
            double s = 0;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) s += ramp[(oy * 2 + dy) * 4 + ox * 2 + dx];
            CHECK(avg.at(oy * 2 + ox) == s / 4);
        }

    CHECK_THROWS_AS(pool2d(x, PoolKind::max, 3, 1), ShapeError);
    // Padded max pooling never selects the padding.
    const Tensor neg = pool2d(Tensor::full({1, 2, 2}, -5), PoolKind::max, 3, 2, 1);
    CHECK(neg.item() == -5);
}

TEST_CASE("concat and slice") {
    const Tensor a({1, 2, 2}, {1, 2, 3, 4}), b({1, 2, 2}, {5, 6, 7, 8});
    const Tensor c = concat_channels(a, b);
    CHECK(c.shape() == Shape{2, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) CHECK(c.at(i) == static_cast<real>(i + 1));
    const Tensor empty(Shape{0, 2, 2}, {});
    const Tensor same = concat_channels(a, empty);
    CHECK(same.shape() == a.shape());
    CHECK(std::equal(same.data().begin(), same.data().end(), a.data().begin()));
    const Tensor back_a = slice_channels(c, 0, 1), back_b = slice_channels(c, 1, 2);
    CHECK(std::equal(back_a.data().begin(), back_a.data().end(), a.data().begin()));
    CHECK(std::equal(back_b.data().begin(), back_b.data().end(), b.data().begin()));
    CHECK_THROWS_AS(concat_channels(a, Tensor::zeros({1, 3, 2})), ShapeError);

    Tensor ga = Tensor::zeros({2, 3, 3}, true), gb = Tensor::zeros({1, 3, 3}, true);
    sum(concat_channels(ga, gb)).backward();
    for (real g : ga.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient checks on random instances") {
    std::mt19937_64 gen(2024);
    constexpr double kTol = 1e-4;
    constexpr int kCases = 20;
    double worst = 0;
    for (int i = 0; i < kCases; ++i) {
        Tensor x = normal_tensor({2, 2, 5, 5}, gen), k = normal_tensor({3, 2, 3, 3}, gen), bias = normal_tensor({3}, gen);
        const std::size_t stride = 1 + static_cast<std::size_t>(i % 2), pad = static_cast<std::size_t>(i % 3 == 0);
        worst = std::max(worst, gradient_check([&] { return sum(mul(conv2d(x, k, bias, stride, pad), conv2d(x, k, bias, stride, pad))); },
                                               {x, k, bias}));

        Tensor p = normal_tensor({2, 3, 6, 6}, gen);
        Tensor w = normal_tensor({2, 3, 3, 3}, gen, false);
        worst = std::max(worst, gradient_check([&] { return sum(mul(pool2d(p, PoolKind::max, 3, 2, 1), pool2d(p, PoolKind::max, 3, 2, 1))); }, {p}));
        worst = std::max(worst, gradient_check([&] { return sum(mul(pool2d(p, PoolKind::average, 2, 2), w)); }, {p}));

        Tensor g = normal_tensor({2, 3, 4, 4}, gen);
        Tensor wl = normal_tensor({5, 3}, gen), bl = normal_tensor({5}, gen);
        worst = std::max(worst, gradient_check([&] { return sum(sigmoid(linear(global_avg_pool(g), wl, bl))); }, {g, wl, bl}));

        Tensor s = normal_tensor({3, 4}, gen), m = normal_tensor({3, 4}, gen, false);
        worst = std::max(worst, gradient_check([&] { return sum(mul(softmax(s), m)); }, {s}));
        worst = std::max(worst, gradient_check([&] { return mean(mul(relu(s), sub(s, m))); }, {s}));

        Tensor ca = normal_tensor({2, 3, 3}, gen), cb = normal_tensor({1, 3, 3}, gen);
        Tensor cw = normal_tensor({3, 3, 3}, gen, false);
        worst = std::max(worst, gradient_check([&] { return sum(mul(concat_channels(ca, cb), cw)); }, {ca, cb}));
        worst = std::max(worst, gradient_check([&] { return sum(mul(slice_channels(concat_channels(ca, cb), 1, 3), slice_channels(cw, 0, 2))); }, {ca, cb}));

        BatchNorm bn = BatchNorm::make(3);
        bn.weight = normal_tensor({3}, gen);
        bn.bias = normal_tensor({3}, gen);
        Tensor bx = normal_tensor({2, 3, 3, 3}, gen), bw = normal_tensor({2, 3, 3, 3}, gen, false);
        worst = std::max(worst, gradient_check(
                                    [&] {
                                        BatchNorm copy = bn;
                                        copy.running_mean = bn.running_mean.clone();
                                        copy.running_var = bn.running_var.clone();
                                        return sum(mul(batch_norm(bx, copy, Mode::train), bw));
                                    },
                                    {bx, bn.weight, bn.bias}));

        Tensor z = normal_tensor({4, 3}, gen);
        const Tensor y({4, 3}, {1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 0, 1});
        worst = std::max(worst, gradient_check([&] { return bce_loss(z, y); }, {z}));
        const std::size_t targets[] = {0, 2, 1, 2};
        worst = std::max(worst, gradient_check([&] { return ce_loss(z, targets); }, {z}));
    }
    CHECK(worst <= kTol);
}
