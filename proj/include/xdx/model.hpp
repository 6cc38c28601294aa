#pragma once

// Dense-connectivity CNN classifiers built from a declarative NetworkSpec.
//
// Layout (names follow the dotted scheme used in weight files):
//   features.conv0      7x7 conv, stride 2, pad 3
//   features.norm0      BN -> ReLU -> 3x3 max pool, stride 2, pad 1
//   features.denseblockK.denselayerJ   BN -> ReLU -> 3x3 conv (growth_rate channels), concatenated
//   features.transitionK               BN -> ReLU -> 1x1 conv (channels/2) -> 2x2 avg pool
//   features.norm5      BN -> ReLU  (default Grad-CAM target)
//   classifier          global average pool -> linear -> logits

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xdx/tensor.hpp"

namespace xdx {

enum class HeadKind { binary_sigmoid, softmax, multilabel_sigmoid };

struct HeadSpec {
    HeadKind kind = HeadKind::binary_sigmoid;
    std::size_t classes = 1;

    static HeadSpec binary() { return {HeadKind::binary_sigmoid, 1}; }
    static HeadSpec softmax(std::size_t n) { return {HeadKind::softmax, n}; }
    static HeadSpec multilabel(std::size_t n) { return {HeadKind::multilabel_sigmoid, n}; }

    std::size_t logits() const { return kind == HeadKind::binary_sigmoid ? 1 : classes; }
    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// "binary_sigmoid", "softmax(14)", "multilabel_sigmoid(14)".
std::string to_string(const HeadSpec& head);
HeadSpec parse_head(const std::string& text);

struct NetworkSpec {
    std::size_t init_channels = 64;
    std::size_t growth_rate = 32;
    std::vector<std::size_t> block_sizes{6, 12, 24, 16};
    HeadSpec head;
    std::size_t input_size = 224;

    static NetworkSpec densenet121(HeadSpec head);
    /// init 8, growth 4, blocks [2,2].
    static NetworkSpec toy(HeadSpec head, std::size_t input_size = 32);
    static NetworkSpec preset(const std::string& name, HeadSpec head);

    /// Throws std::invalid_argument naming the broken field.
    void validate() const;

    /// Channels after the stem, after each block and after each transition:
    /// [init, block1, trans1, block2, ..., blockN].
    std::vector<std::size_t> channel_trace() const;
    std::size_t feature_channels() const { return channel_trace().back(); }
    /// Spatial side of the final feature map.
    std::size_t feature_size() const;
    /// Matching preset name, or "custom".
    std::string preset_name() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

enum class Mode { train, infer };

struct BatchNorm {
    Tensor weight;        // scale, learnable
    Tensor bias;          // shift, learnable
    Tensor running_mean;  // buffer
    Tensor running_var;   // buffer
    real momentum = real(0.1);
    real eps = real(1e-5);

    static BatchNorm make(std::size_t channels);
    std::size_t channels() const { return weight.numel(); }
};

/// Normalizes per channel over batch and spatial axes. Train mode uses batch
/// statistics and updates the running estimates (unbiased variance); infer mode
/// uses the running estimates. x is [C,H,W] or [N,C,H,W].
Tensor batch_norm(const Tensor& x, const BatchNorm& bn, Mode mode, bool track_parameters = true);

struct ForwardOptions {
    Mode mode = Mode::infer;
    /// When set, the activation leaving this stage is replaced by a fresh leaf
    /// that requires grad and returned as ForwardResult::captured.
    std::string capture_layer;
    /// Parameters enter the graph detached: no parameter receives a gradient.
    bool freeze_parameters = false;
};

struct ForwardResult {
    Tensor logits;
    Tensor captured;
};

class Network {
public:
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    /// Deep copy: parameters and buffers are not shared with the source.
    Network clone() const;

    const NetworkSpec& spec() const { return spec_; }

    /// Learnable tensors in registration order.
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return parameters_; }
    /// Batch-norm running statistics.
    const std::vector<std::pair<std::string, Tensor>>& named_buffers() const { return buffers_; }
    /// Parameters followed by buffers; this is what weight files hold.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    /// Logits without the head activation. batch is [1,S,S] or [N,1,S,S].
    Tensor forward(const Tensor& batch, Mode mode);
    Tensor forward(const Tensor& batch) const;
    /// Train mode mutates running statistics even through a const Network;
    /// callers training must own the network exclusively.
    ForwardResult forward(const Tensor& batch, const ForwardOptions& options) const;

    /// Stage names accepted by ForwardOptions::capture_layer.
    std::vector<std::string> capture_points() const;

    void zero_grad();

private:
    friend Network build_network(const NetworkSpec& spec, std::uint64_t seed);

    struct Conv {
        Tensor weight;
        std::size_t stride = 1;
        std::size_t pad = 0;
    };
    struct Unit {
        BatchNorm norm;
        Conv conv;
    };

    Network() = default;
    void register_tensors();

    NetworkSpec spec_;
    Conv conv0_;
    BatchNorm norm0_;
    std::vector<std::vector<Unit>> blocks_;
    std::vector<Unit> transitions_;
    BatchNorm norm5_;
    Tensor classifier_weight_;
    Tensor classifier_bias_;

    std::vector<std::pair<std::string, Tensor>> parameters_;
    std::vector<std::pair<std::string, Tensor>> buffers_;
};

/// He-uniform conv and classifier weights, zero classifier bias, BN scale 1 and
/// shift 0. Initial values are representable in 32 bits so a fresh network
/// survives a weight-file round trip bit for bit.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Weight files
//
// "XDXW", then little-endian u32 version (1), u32 tensor_count and per tensor:
// u16 name_len, UTF-8 name, u8 ndim, u32 dims[ndim], f32 data row-major.

class WeightFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

std::vector<std::uint8_t> encode_weights(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_weights(std::span<const std::uint8_t> bytes);
std::vector<NamedArray> read_weight_file(const std::string& path);
void write_weight_file(const std::string& path, const std::vector<NamedArray>& arrays);

std::vector<NamedArray> export_weights(const Network& net);
void save_weights(const Network& net, const std::string& path);

enum class LoadMode {
    strict,   // file names must equal the network's names
    partial,  // file may cover a subset; names the network lacks are skipped
};

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> skipped;
};

/// All-or-nothing: on any error the network is left untouched.
LoadReport load_weights(Network& net, const std::string& path, LoadMode mode = LoadMode::strict);
LoadReport apply_weights(Network& net, const std::vector<NamedArray>& arrays, LoadMode mode);

/// Recovers the architecture from tensor names and shapes. Spatial input size
/// is not recorded in weight files, so it is supplied by the caller.
NetworkSpec infer_spec(const std::vector<NamedArray>& arrays, std::size_t input_size);

/// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string weight_checksum(const std::string& path);

}  // namespace xdx
