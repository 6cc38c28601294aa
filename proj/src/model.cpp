#include "xdx/model.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <stdexcept>

#include "xdx/rng.hpp"

namespace xdx {

std::string to_string(const HeadSpec& head) {
    switch (head.kind) {
        case HeadKind::binary_sigmoid: return "binary_sigmoid";
        case HeadKind::softmax: return "softmax(" + std::to_string(head.classes) + ")";
        case HeadKind::multilabel_sigmoid: return "multilabel_sigmoid(" + std::to_string(head.classes) + ")";
    }
    return "unknown";
}

HeadSpec parse_head(const std::string& text) {
    if (text == "binary_sigmoid") return HeadSpec::binary();
    static const std::regex pattern(R"((softmax|multilabel_sigmoid)\((\d+)\))");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) throw std::invalid_argument("unknown head '" + text + "'");
    const auto n = static_cast<std::size_t>(std::stoul(m[2].str()));
    if (n == 0) throw std::invalid_argument("head '" + text + "' needs at least one output");
    return m[1] == "softmax" ? HeadSpec::softmax(n) : HeadSpec::multilabel(n);
}

// ---------------------------------------------------------------------------
// NetworkSpec

NetworkSpec NetworkSpec::densenet121(HeadSpec head) {
    NetworkSpec spec;
    spec.head = head;
    return spec;
}

NetworkSpec NetworkSpec::toy(HeadSpec head, std::size_t input_size) {
    NetworkSpec spec;
    spec.init_channels = 8;
    spec.growth_rate = 4;
    spec.block_sizes = {2, 2};
    spec.head = head;
    spec.input_size = input_size;
    return spec;
}

NetworkSpec NetworkSpec::preset(const std::string& name, HeadSpec head) {
    if (name == "densenet121") return densenet121(head);
    if (name == "toy") return toy(head);
    throw std::invalid_argument("unknown network preset '" + name + "' (expected densenet121 or toy)");
}

std::string NetworkSpec::preset_name() const {
    auto same_arch = [this](const NetworkSpec& other) {
        return init_channels == other.init_channels && growth_rate == other.growth_rate &&
               block_sizes == other.block_sizes;
    };
    if (same_arch(densenet121(head))) return "densenet121";
    if (same_arch(toy(head))) return "toy";
    return "custom";
}

namespace {

std::size_t stem_output_size(std::size_t input) {
    const std::size_t conv = (input + 6 - 7) / 2 + 1;
    return (conv + 2 - 3) / 2 + 1;
}

}  // namespace

void NetworkSpec::validate() const {
    if (init_channels == 0) throw std::invalid_argument("network spec: init_channels must be positive");
    if (growth_rate == 0) throw std::invalid_argument("network spec: growth_rate must be positive");
    if (block_sizes.empty()) throw std::invalid_argument("network spec: block_sizes must be nonempty");
    for (std::size_t i = 0; i < block_sizes.size(); ++i)
        if (block_sizes[i] == 0)
            throw std::invalid_argument("network spec: block_sizes[" + std::to_string(i) + "] must be positive");
    if (head.logits() == 0) throw std::invalid_argument("network spec: head needs at least one output");
    if (input_size < 1) throw std::invalid_argument("network spec: input_size must be positive");
    std::size_t side = stem_output_size(input_size);
    for (std::size_t t = 0; t + 1 < block_sizes.size(); ++t) {
        if (side < 2)
            throw std::invalid_argument("network spec: input_size " + std::to_string(input_size) +
                                        " too small for " + std::to_string(block_sizes.size()) + " blocks");
        side /= 2;
    }
    const auto trace = channel_trace();
    for (std::size_t c : trace)
        if (c == 0) throw std::invalid_argument("network spec: a transition would leave zero channels");
}

std::vector<std::size_t> NetworkSpec::channel_trace() const {
    std::vector<std::size_t> trace{init_channels};
    std::size_t channels = init_channels;
    for (std::size_t i = 0; i < block_sizes.size(); ++i) {
        channels += block_sizes[i] * growth_rate;
        trace.push_back(channels);
        if (i + 1 < block_sizes.size()) {
            channels /= 2;
            trace.push_back(channels);
        }
    }
    return trace;
}

std::size_t NetworkSpec::feature_size() const {
    std::size_t side = stem_output_size(input_size);
    for (std::size_t t = 0; t + 1 < block_sizes.size(); ++t) side /= 2;
    return side;
}

// ---------------------------------------------------------------------------
// Batch norm

BatchNorm BatchNorm::make(std::size_t channels) {
    BatchNorm bn;
    bn.weight = Tensor::full({channels}, real{1}, true);
    bn.bias = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, real{1});
    return bn;
}

Tensor batch_norm(const Tensor& x, const BatchNorm& bn, Mode mode, bool track_parameters) {
    std::size_t batch = 1, channels = 0, plane = 0;
    if (x.ndim() == 3) {
        channels = x.dim(0);
        plane = x.dim(1) * x.dim(2);
    } else if (x.ndim() == 4) {
        batch = x.dim(0);
        channels = x.dim(1);
        plane = x.dim(2) * x.dim(3);
    } else {
        throw ShapeError("batch_norm: expected [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
    }
    if (channels != bn.channels())
        throw ShapeError("batch_norm: input has " + std::to_string(channels) + " channels, state has " +
                         std::to_string(bn.channels()));
    const std::size_t count = batch * plane;
    if (count == 0) throw ShapeError("batch_norm: empty input");

    auto in = x.data();
    auto gamma = bn.weight.data(), beta = bn.bias.data();
    std::vector<real> mean(channels), inv_std(channels);
    if (mode == Mode::train) {
        Tensor running_mean = bn.running_mean, running_var = bn.running_var;
        auto rm = running_mean.mutable_data(), rv = running_var.mutable_data();
        for (std::size_t c = 0; c < channels; ++c) {
            real acc = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < plane; ++i) acc += in[(n * channels + c) * plane + i];
            const real mu = acc / static_cast<real>(count);
            real sq = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < plane; ++i) {
                    const real d = in[(n * channels + c) * plane + i] - mu;
                    sq += d * d;
                }
            const real var = sq / static_cast<real>(count);
            const real unbiased = count > 1 ? sq / static_cast<real>(count - 1) : var;
            mean[c] = mu;
            inv_std[c] = real{1} / std::sqrt(var + bn.eps);
            rm[c] = (real{1} - bn.momentum) * rm[c] + bn.momentum * mu;
            rv[c] = (real{1} - bn.momentum) * rv[c] + bn.momentum * unbiased;
        }
    } else {
        auto rm = bn.running_mean.data(), rv = bn.running_var.data();
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = rm[c];
            inv_std[c] = real{1} / std::sqrt(rv[c] + bn.eps);
        }
    }

    std::vector<real> normalized(x.numel()), out(x.numel());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t idx = (n * channels + c) * plane + i;
                normalized[idx] = (in[idx] - mean[c]) * inv_std[c];
                out[idx] = gamma[c] * normalized[idx] + beta[c];
            }

    Tensor weight = track_parameters ? bn.weight : bn.weight.detach();
    Tensor bias = track_parameters ? bn.bias : bn.bias.detach();
    const bool batch_stats = mode == Mode::train;
    return make_result(
        x.shape(), std::move(out), {x, weight, bias},
        [batch, channels, plane, count, batch_stats, xhat = std::move(normalized), inv_std = std::move(inv_std),
         gamma_t = bn.weight.detach()](auto g, auto gin) {
            auto gamma = gamma_t.data();
            for (std::size_t c = 0; c < channels; ++c) {
                real sum_g = 0, sum_gx = 0;
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = (n * channels + c) * plane + i;
                        sum_g += g[idx];
                        sum_gx += g[idx] * xhat[idx];
                    }
                if (gin[1]) (*gin[1])[c] += sum_gx;
                if (gin[2]) (*gin[2])[c] += sum_g;
                if (!gin[0]) continue;
                const real k = gamma[c] * inv_std[c];
                const real m = static_cast<real>(count);
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = (n * channels + c) * plane + i;
                        if (batch_stats)
                            (*gin[0])[idx] += k * (g[idx] - sum_g / m - xhat[idx] * sum_gx / m);
                        else
                            (*gin[0])[idx] += k * g[idx];
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Network

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, SplitMix64& rng) {
    const auto bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    std::vector<real> values(numel(shape));
    for (auto& v : values) v = static_cast<real>(rng.uniform_float(-bound, bound));
    return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    SplitMix64 rng(seed);
    Network net;
    net.spec_ = spec;

    net.conv0_ = {he_uniform({spec.init_channels, 1, 7, 7}, 49, rng), 2, 3};
    net.norm0_ = BatchNorm::make(spec.init_channels);
    std::size_t channels = spec.init_channels;
    for (std::size_t b = 0; b < spec.block_sizes.size(); ++b) {
        std::vector<Network::Unit> block;
        for (std::size_t l = 0; l < spec.block_sizes[b]; ++l) {
            const std::size_t in = channels + l * spec.growth_rate;
            block.push_back({BatchNorm::make(in), {he_uniform({spec.growth_rate, in, 3, 3}, in * 9, rng), 1, 1}});
        }
        net.blocks_.push_back(std::move(block));
        channels += spec.block_sizes[b] * spec.growth_rate;
        if (b + 1 < spec.block_sizes.size()) {
            const std::size_t out = channels / 2;
            net.transitions_.push_back({BatchNorm::make(channels), {he_uniform({out, channels, 1, 1}, channels, rng), 1, 0}});
            channels = out;
        }
    }
    net.norm5_ = BatchNorm::make(channels);
    net.classifier_weight_ = he_uniform({spec.head.logits(), channels}, channels, rng);
    net.classifier_bias_ = Tensor::zeros({spec.head.logits()}, true);
    net.register_tensors();
    return net;
}

void Network::register_tensors() {
    parameters_.clear();
    buffers_.clear();
    auto add_norm = [this](const std::string& prefix, const BatchNorm& bn) {
        parameters_.emplace_back(prefix + ".weight", bn.weight);
        parameters_.emplace_back(prefix + ".bias", bn.bias);
        buffers_.emplace_back(prefix + ".running_mean", bn.running_mean);
        buffers_.emplace_back(prefix + ".running_var", bn.running_var);
    };
    parameters_.emplace_back("features.conv0.weight", conv0_.weight);
    add_norm("features.norm0", norm0_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
            const std::string prefix =
                "features.denseblock" + std::to_string(b + 1) + ".denselayer" + std::to_string(l + 1);
            add_norm(prefix + ".norm", blocks_[b][l].norm);
            parameters_.emplace_back(prefix + ".conv.weight", blocks_[b][l].conv.weight);
        }
        if (b < transitions_.size()) {
            const std::string prefix = "features.transition" + std::to_string(b + 1);
            add_norm(prefix + ".norm", transitions_[b].norm);
            parameters_.emplace_back(prefix + ".conv.weight", transitions_[b].conv.weight);
        }
    }
    add_norm("features.norm5", norm5_);
    parameters_.emplace_back("classifier.weight", classifier_weight_);
    parameters_.emplace_back("classifier.bias", classifier_bias_);
}

Network Network::clone() const {
    Network copy;
    copy.spec_ = spec_;
    auto clone_param = [](const Tensor& t) {
        Tensor c = t.clone();
        c.set_requires_grad(t.requires_grad());
        return c;
    };
    auto clone_norm = [&](const BatchNorm& bn) {
        BatchNorm c = bn;
        c.weight = clone_param(bn.weight);
        c.bias = clone_param(bn.bias);
        c.running_mean = bn.running_mean.clone();
        c.running_var = bn.running_var.clone();
        return c;
    };
    auto clone_unit = [&](const Unit& u) { return Unit{clone_norm(u.norm), {clone_param(u.conv.weight), u.conv.stride, u.conv.pad}}; };
    copy.conv0_ = {clone_param(conv0_.weight), conv0_.stride, conv0_.pad};
    copy.norm0_ = clone_norm(norm0_);
    for (const auto& block : blocks_) {
        std::vector<Unit> b;
        for (const auto& u : block) b.push_back(clone_unit(u));
        copy.blocks_.push_back(std::move(b));
    }
    for (const auto& t : transitions_) copy.transitions_.push_back(clone_unit(t));
    copy.norm5_ = clone_norm(norm5_);
    copy.classifier_weight_ = clone_param(classifier_weight_);
    copy.classifier_bias_ = clone_param(classifier_bias_);
    copy.register_tensors();
    return copy;
}

std::vector<std::pair<std::string, Tensor>> Network::named_tensors() const {
    auto all = parameters_;
    all.insert(all.end(), buffers_.begin(), buffers_.end());
    return all;
}

std::vector<Tensor> Network::parameters() const {
    std::vector<Tensor> out;
    out.reserve(parameters_.size());
    for (const auto& [name, t] : parameters_) out.push_back(t);
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : parameters_) total += t.numel();
    return total;
}

void Network::zero_grad() {
    for (auto& [name, t] : parameters_) t.zero_grad();
}

std::vector<std::string> Network::capture_points() const {
    std::vector<std::string> names{"features.pool0"};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        names.push_back("features.denseblock" + std::to_string(b + 1));
        if (b < transitions_.size()) names.push_back("features.transition" + std::to_string(b + 1));
    }
    names.push_back("features.norm5");
    return names;
}

Tensor Network::forward(const Tensor& batch, Mode mode) {
    ForwardOptions options;
    options.mode = mode;
    return std::as_const(*this).forward(batch, options).logits;
}

Tensor Network::forward(const Tensor& batch) const { return forward(batch, ForwardOptions{}).logits; }

ForwardResult Network::forward(const Tensor& batch, const ForwardOptions& options) const {
    const std::size_t s = spec_.input_size;
    const bool batched = batch.ndim() == 4;
    const bool shape_ok = (batch.ndim() == 3 && batch.dim(0) == 1 && batch.dim(1) == s && batch.dim(2) == s) ||
                          (batched && batch.dim(0) > 0 && batch.dim(1) == 1 && batch.dim(2) == s && batch.dim(3) == s);
    if (!shape_ok)
        throw ShapeError("network input: expected [1," + std::to_string(s) + "," + std::to_string(s) + "] or [N,1," +
                         std::to_string(s) + "," + std::to_string(s) + "], got " + to_string(batch.shape()));
    if (!options.capture_layer.empty()) {
        const auto points = capture_points();
        if (std::find(points.begin(), points.end(), options.capture_layer) == points.end())
            throw std::invalid_argument("unknown capture layer '" + options.capture_layer + "'");
    }

    const bool track = !options.freeze_parameters;
    const Mode mode = options.mode;
    auto param = [track](const Tensor& t) { return track ? t : t.detach(); };
    ForwardResult result;
    auto stage = [&](const char* name, Tensor x) {
        if (options.capture_layer == name) {
            result.captured = x.detach();
            result.captured.set_requires_grad(true);
            return result.captured;
        }
        return x;
    };
    auto norm_relu = [&](const Tensor& x, const BatchNorm& bn) { return relu(batch_norm(x, bn, mode, track)); };
    auto conv = [&](const Tensor& x, const Conv& c) {
        return conv2d(x, param(c.weight), std::nullopt, c.stride, c.pad);
    };

    Tensor x = conv(batch, conv0_);
    x = pool2d(norm_relu(x, norm0_), PoolKind::max, 3, 2, 1);
    x = stage("features.pool0", x);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (const Unit& layer : blocks_[b]) x = concat_channels(x, conv(norm_relu(x, layer.norm), layer.conv));
        x = stage(("features.denseblock" + std::to_string(b + 1)).c_str(), x);
        if (b < transitions_.size()) {
            const Unit& t = transitions_[b];
            x = pool2d(conv(norm_relu(x, t.norm), t.conv), PoolKind::average, 2, 2);
            x = stage(("features.transition" + std::to_string(b + 1)).c_str(), x);
        }
    }
    x = stage("features.norm5", norm_relu(x, norm5_));
    result.logits = linear(global_avg_pool(x), param(classifier_weight_), param(classifier_bias_));
    return result;
}

}  // namespace xdx
