#pragma once

// Grad-CAM heatmaps over a network's last feature maps.

#include <string>
#include <vector>

#include <json.hpp>

#include "xdx/image.hpp"
#include "xdx/model.hpp"

namespace xdx {

struct Heatmap {
    std::size_t width = 0;
    std::size_t height = 0;
    /// Row-major, each in [0,1].
    std::vector<double> values;
    std::string target_class;
    /// Maximum of the rectified map before normalization; 0 means the map is all zeros.
    double raw_max = 0.0;
};

/// Combines activations A[k] ([C,H,W]) with dy/dA[k] of the same shape:
/// alpha_k = mean(dy/dA_k), map = ReLU(sum_k alpha_k A_k), divided by its maximum.
Heatmap combine_activations(const Tensor& activations, const Tensor& gradients, std::string target_class = {});

struct GradCamOptions {
    std::string target_layer = "features.norm5";
    std::string target_class;  // label only
};

/// Gradient of the pre-activation logit `class_index` with respect to the
/// activations leaving `target_layer`. Runs in infer mode with parameters
/// frozen: the network is not modified and may be shared across threads.
/// input is [1,S,S] or [1,1,S,S].
Heatmap grad_cam(const Network& net, const Tensor& input, std::size_t class_index, const GradCamOptions& options = {});

/// Bilinear upsampling to target x target; values stay in [0,1].
std::vector<double> upsample_heatmap(const Heatmap& heatmap, std::size_t target = 224);

/// {"width":..,"height":..,"values":[...]} plus target_class and raw_max when requested.
nlohmann::json heatmap_to_json(const Heatmap& heatmap, bool include_meta = false);
Image heatmap_to_image(const Heatmap& heatmap);

}  // namespace xdx
