#include "xdx/explain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xdx {

Heatmap combine_activations(const Tensor& activations, const Tensor& gradients, std::string target_class) {
    if (activations.ndim() != 3)
        throw ShapeError("grad-cam: activations must be [C,H,W], got " + to_string(activations.shape()));
    if (gradients.shape() != activations.shape())
        throw ShapeError("grad-cam: gradient shape " + to_string(gradients.shape()) + " differs from activations " +
                         to_string(activations.shape()));
    const std::size_t channels = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
    const std::size_t plane = h * w;
    auto a = activations.data(), g = gradients.data();

    Heatmap map;
    map.width = w;
    map.height = h;
    map.target_class = std::move(target_class);
    map.values.assign(plane, 0.0);
    for (std::size_t k = 0; k < channels; ++k) {
        double alpha = 0;
        for (std::size_t i = 0; i < plane; ++i) alpha += g[k * plane + i];
        alpha /= static_cast<double>(plane);
        if (alpha == 0) continue;
        for (std::size_t i = 0; i < plane; ++i) map.values[i] += alpha * a[k * plane + i];
    }
    for (auto& v : map.values) v = std::max(v, 0.0);
    map.raw_max = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
    if (map.raw_max > 0)
        for (auto& v : map.values) v /= map.raw_max;
    return map;
}

Heatmap grad_cam(const Network& net, const Tensor& input, std::size_t class_index, const GradCamOptions& options) {
    const std::size_t outputs = net.spec().head.logits();
    if (class_index >= outputs)
        throw std::out_of_range("grad-cam: class index " + std::to_string(class_index) + " outside head of " +
                                std::to_string(outputs) + " outputs");
    if (input.ndim() == 4 && input.dim(0) != 1)
        throw ShapeError("grad-cam: expected a single image, got batch shape " + to_string(input.shape()));
    EnableGradGuard grad_on;

    ForwardOptions fo;
    fo.mode = Mode::infer;
    fo.capture_layer = options.target_layer;
    fo.freeze_parameters = true;
    ForwardResult fr = net.forward(input.detach(), fo);

    // y_c = logits[0, c]; select it with a one-hot mask so backward seeds only that logit.
    std::vector<real> mask(fr.logits.numel(), real{0});
    mask[class_index] = real{1};
    Tensor score = sum(mul(fr.logits, Tensor(fr.logits.shape(), std::move(mask))));
    score.backward();

    const Shape& shape = fr.captured.shape();
    const Shape plane_shape(shape.end() - 3, shape.end());
    Tensor activations(plane_shape, std::vector<real>(fr.captured.data().begin(), fr.captured.data().end()));
    std::vector<real> grads(fr.captured.numel(), real{0});
    if (fr.captured.has_grad()) std::copy(fr.captured.grad().begin(), fr.captured.grad().end(), grads.begin());
    return combine_activations(activations, Tensor(plane_shape, std::move(grads)), options.target_class);
}

std::vector<double> upsample_heatmap(const Heatmap& heatmap, std::size_t target) {
    if (target < heatmap.width || target < heatmap.height)
        throw std::invalid_argument("upsample_heatmap: target smaller than the heatmap");
    auto out = resize_bilinear(heatmap.values, heatmap.width, heatmap.height, target, target);
    for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
    return out;
}

nlohmann::json heatmap_to_json(const Heatmap& heatmap, bool include_meta) {
    nlohmann::json j{{"width", heatmap.width}, {"height", heatmap.height}, {"values", heatmap.values}};
    if (include_meta) {
        j["target_class"] = heatmap.target_class;
        j["raw_max"] = heatmap.raw_max;
    }
    return j;
}

Image heatmap_to_image(const Heatmap& heatmap) {
    Image img{heatmap.width, heatmap.height, 1, std::vector<std::uint8_t>(heatmap.values.size())};
    for (std::size_t i = 0; i < heatmap.values.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(heatmap.values[i], 0.0, 1.0) * 255.0));
    return img;
}

}  // namespace xdx
