#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xdx/tensor.hpp"

namespace xdx {

enum class OptimizerKind { adam, radam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    /// Stage 1/2 training: Adam, lr 1e-3, betas (0.9, 0.999), weight decay 1e-5.
    static OptimizerConfig adam_defaults();
    /// Stage 3 training: RAdam, lr 1e-4, weight decay 3e-4.
    static OptimizerConfig radam_defaults();

    void validate() const;
};

/// Moments are kept in 64-bit regardless of the tensor precision.
struct OptimizerState {
    OptimizerConfig config;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    OptimizerState() = default;
    OptimizerState(OptimizerConfig config, const std::vector<std::size_t>& sizes);
};

OptimizerState make_state(const OptimizerConfig& config, const std::vector<Tensor>& params);

// The step functions advance t by one and update every parameter slot.
// Weight decay is the coupled L2 form (added to the gradient); eps is added
// outside the square root.
void adam_step(OptimizerState& state, std::span<const std::span<real>> params,
               std::span<const std::span<const real>> grads);
void radam_step(OptimizerState& state, std::span<const std::span<real>> params,
                std::span<const std::span<const real>> grads);

/// Dispatches on state.config.kind, reading gradients from the tensors.
/// A parameter that never received a gradient is stepped with a zero gradient.
void optimizer_step(OptimizerState& state, std::vector<Tensor>& params);

/// rho_inf = 2/(1-beta2) - 1.
double radam_rho_inf(double beta2);
/// rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t).
double radam_rho(double beta2, std::uint64_t t);
/// Rectification factor; only meaningful when rho_t > 4.
double radam_rectification(double beta2, std::uint64_t t);

/// Multiplies the learning rate by `factor` once the monitored metric has not
/// strictly decreased for more than `patience` consecutive calls.
struct PlateauScheduler {
    double factor = 0.1;
    int patience = 3;
    double min_lr = 0.0;
    double best = std::numeric_limits<double>::infinity();
    int num_bad_epochs = 0;

    /// Returns true when the learning rate was reduced on this call.
    bool step(double metric, OptimizerState& state);
};

/// Mean binary cross-entropy from logits; targets must be 0 or 1.
Tensor bce_loss(const Tensor& logits, const Tensor& targets);
/// Mean cross-entropy over rows. logits is [C] (one target) or [N,C].
Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> targets);
Tensor ce_loss(const Tensor& logits, std::size_t target);

}  // namespace xdx
