#pragma once

#include "xdx/cascade.hpp"

namespace testing {

/// Scripted stage outputs; ignores the image.
struct FakeBackend final : xdx::CascadeBackend {
    double p_xray = 0.9;
    std::vector<double> types = std::vector<double>(xdx::kXrayTypeCount, 1.0 / xdx::kXrayTypeCount);
    std::vector<double> conditions = std::vector<double>(xdx::kConditionCount, 0.1);
    std::vector<xdx::XrayType> modeled{xdx::XrayType::Chest};
    mutable int explain_calls = 0;

    double xray_probability(const xdx::Image&) const override { return p_xray; }
    std::vector<double> type_probabilities(const xdx::Image&) const override { return types; }
    bool has_abnormality_model(xdx::XrayType type) const override {
        return std::find(modeled.begin(), modeled.end(), type) != modeled.end();
    }
    std::vector<double> abnormality_probabilities(xdx::XrayType, const xdx::Image&) const override {
        return conditions;
    }
    xdx::Heatmap explain(xdx::XrayType, const xdx::Image&, xdx::Condition c) const override {
        ++explain_calls;
        return xdx::Heatmap{2, 2, {0, 0.5, 1, 0.25}, std::string(xdx::name_of(c)), 2.0};
    }

    void route_to(xdx::XrayType type) {
        std::fill(types.begin(), types.end(), 0.01);
        types[static_cast<std::size_t>(type)] = 1 - 0.01 * (xdx::kXrayTypeCount - 1);
    }
};

}  // namespace testing
