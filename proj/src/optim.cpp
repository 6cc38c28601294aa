#include "xdx/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xdx {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "radam"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "radam") return OptimizerKind::radam;
    throw std::invalid_argument("unknown optimizer '" + text + "' (expected adam or radam)");
}

OptimizerConfig OptimizerConfig::adam_defaults() {
    OptimizerConfig c;
    c.kind = OptimizerKind::adam;
    c.lr = 1e-3;
    c.weight_decay = 1e-5;
    return c;
}

OptimizerConfig OptimizerConfig::radam_defaults() {
    OptimizerConfig c;
    c.kind = OptimizerKind::radam;
    c.lr = 1e-4;
    c.weight_decay = 3e-4;
    return c;
}

void OptimizerConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("optimizer: lr must be positive");
    if (!(beta1 > 0 && beta1 < 1)) throw std::invalid_argument("optimizer: beta1 must lie in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw std::invalid_argument("optimizer: beta2 must lie in (0,1)");
    if (!(eps > 0)) throw std::invalid_argument("optimizer: eps must be positive");
    if (!(weight_decay >= 0)) throw std::invalid_argument("optimizer: weight_decay must be nonnegative");
}

OptimizerState::OptimizerState(OptimizerConfig cfg, const std::vector<std::size_t>& sizes) : config(cfg) {
    config.validate();
    for (std::size_t n : sizes) {
        m.emplace_back(n, 0.0);
        v.emplace_back(n, 0.0);
    }
}

OptimizerState make_state(const OptimizerConfig& config, const std::vector<Tensor>& params) {
    std::vector<std::size_t> sizes;
    for (const auto& p : params) sizes.push_back(p.numel());
    return OptimizerState(config, sizes);
}

double radam_rho_inf(double beta2) { return 2.0 / (1.0 - beta2) - 1.0; }

double radam_rho(double beta2, std::uint64_t t) {
    const double bt = std::pow(beta2, static_cast<double>(t));
    return radam_rho_inf(beta2) - 2.0 * static_cast<double>(t) * bt / (1.0 - bt);
}

double radam_rectification(double beta2, std::uint64_t t) {
    const double inf = radam_rho_inf(beta2);
    const double rho = radam_rho(beta2, t);
    return std::sqrt(((rho - 4.0) * (rho - 2.0) * inf) / ((inf - 4.0) * (inf - 2.0) * rho));
}

namespace {

void check_slots(const OptimizerState& state, std::span<const std::span<real>> params,
                 std::span<const std::span<const real>> grads) {
    if (params.size() != state.m.size() || grads.size() != state.m.size())
        throw std::invalid_argument("optimizer: state tracks " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()) + " params and " +
                                    std::to_string(grads.size()) + " grads");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].size() != state.m[i].size() || grads[i].size() != state.m[i].size())
            throw std::invalid_argument("optimizer: shape mismatch in parameter slot " + std::to_string(i));
}

// Shared moment update; `apply` turns (m_hat, v_hat) into the parameter delta.
template <typename Apply>
void moment_step(OptimizerState& state, std::span<const std::span<real>> params,
                 std::span<const std::span<const real>> grads, Apply apply) {
    check_slots(state, params, grads);
    const auto& c = state.config;
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t s = 0; s < params.size(); ++s) {
        auto& m = state.m[s];
        auto& v = state.v[s];
        for (std::size_t i = 0; i < params[s].size(); ++i) {
            const double w = params[s][i];
            const double g = static_cast<double>(grads[s][i]) + c.weight_decay * w;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            params[s][i] = static_cast<real>(w - apply(m[i] / bc1, v[i] / bc2));
        }
    }
}

}  // namespace

void adam_step(OptimizerState& state, std::span<const std::span<real>> params,
               std::span<const std::span<const real>> grads) {
    const double lr = state.config.lr, eps = state.config.eps;
    moment_step(state, params, grads, [lr, eps](double m_hat, double v_hat) {
        return lr * m_hat / (std::sqrt(v_hat) + eps);
    });
}

void radam_step(OptimizerState& state, std::span<const std::span<real>> params,
                std::span<const std::span<const real>> grads) {
    const double lr = state.config.lr, eps = state.config.eps, beta2 = state.config.beta2;
    const std::uint64_t t = state.t + 1;
    const bool rectified = radam_rho(beta2, t) > 4.0;
    const double r = rectified ? radam_rectification(beta2, t) : 0.0;
    moment_step(state, params, grads, [=](double m_hat, double v_hat) {
        if (!rectified) return lr * m_hat;
        return lr * r * m_hat / (std::sqrt(v_hat) + eps);
    });
}

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params) {
    std::vector<std::span<real>> values;
    std::vector<std::span<const real>> grads;
    std::vector<std::vector<real>> zeros;
    zeros.reserve(params.size());
    for (auto& p : params) {
        values.push_back(p.mutable_data());
        if (p.has_grad()) {
            grads.push_back(p.grad());
        } else {
            zeros.emplace_back(p.numel(), real{0});
            grads.push_back(zeros.back());
        }
    }
    if (state.config.kind == OptimizerKind::adam)
        adam_step(state, values, grads);
    else
        radam_step(state, values, grads);
}

bool PlateauScheduler::step(double metric, OptimizerState& state) {
    if (std::isnan(metric)) throw std::invalid_argument("scheduler: metric is NaN");
    if (metric < best) {
        best = metric;
        num_bad_epochs = 0;
        return false;
    }
    ++num_bad_epochs;
    if (num_bad_epochs <= patience) return false;
    const double reduced = std::max(state.config.lr * factor, min_lr);
    num_bad_epochs = 0;
    if (reduced >= state.config.lr) return false;
    state.config.lr = reduced;
    return true;
}

// ---------------------------------------------------------------------------
// Losses

Tensor bce_loss(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape())
        throw ShapeError("bce_loss: logits " + to_string(logits.shape()) + " vs targets " +
                         to_string(targets.shape()));
    if (logits.numel() == 0) throw ShapeError("bce_loss: empty input");
    auto z = logits.data(), y = targets.data();
    for (real v : y)
        if (v != real{0} && v != real{1}) throw std::invalid_argument("bce_loss: target outside {0,1}");
    const auto n = static_cast<real>(z.size());
    real total = 0;
    for (std::size_t i = 0; i < z.size(); ++i)
        total += std::max(z[i], real{0}) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    return make_result({}, {total / n}, {logits}, [z = logits.detach(), y = targets.detach(), n](auto g, auto gin) {
        auto zd = z.data(), yd = y.data();
        for (std::size_t i = 0; i < zd.size(); ++i) (*gin[0])[i] += g[0] * (stable_sigmoid(zd[i]) - yd[i]) / n;
    });
}

Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> targets) {
    std::size_t rows = 0, cols = 0;
    if (logits.ndim() == 1) {
        rows = 1;
        cols = logits.dim(0);
    } else if (logits.ndim() == 2) {
        rows = logits.dim(0);
        cols = logits.dim(1);
    } else {
        throw ShapeError("ce_loss: logits must be [C] or [N,C], got " + to_string(logits.shape()));
    }
    if (targets.size() != rows)
        throw ShapeError("ce_loss: " + std::to_string(rows) + " rows but " + std::to_string(targets.size()) +
                         " targets");
    if (rows == 0 || cols == 0) throw ShapeError("ce_loss: empty input");
    for (std::size_t t : targets)
        if (t >= cols)
            throw std::out_of_range("ce_loss: target index " + std::to_string(t) + " outside [0," +
                                    std::to_string(cols) + ")");
    auto z = logits.data();
    std::vector<real> probs(z.size());
    real total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const real* row = z.data() + r * cols;
        const real peak = *std::max_element(row, row + cols);
        real s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - peak);
        const real log_norm = peak + std::log(s);
        total += log_norm - row[targets[r]];
        for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - log_norm);
    }
    const auto n = static_cast<real>(rows);
    std::vector<std::size_t> idx(targets.begin(), targets.end());
    return make_result({}, {total / n}, {logits},
                       [probs = std::move(probs), idx = std::move(idx), cols, n](auto g, auto gin) {
                           for (std::size_t r = 0; r < idx.size(); ++r)
                               for (std::size_t c = 0; c < cols; ++c) {
                                   const real onehot = c == idx[r] ? real{1} : real{0};
                                   (*gin[0])[r * cols + c] += g[0] * (probs[r * cols + c] - onehot) / n;
                               }
                       });
}

Tensor ce_loss(const Tensor& logits, std::size_t target) {
    const std::size_t targets[1] = {target};
    return ce_loss(logits, targets);
}

}  // namespace xdx
