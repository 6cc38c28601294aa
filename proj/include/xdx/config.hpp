#pragma once

// JSON run and service configuration, network-spec serialization and model
// loading with the `<weights>.spec.json` sidecar.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "xdx/cascade.hpp"
#include "xdx/model.hpp"
#include "xdx/optim.hpp"

namespace xdx {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// binary for stage 1, softmax(14) for stage 2, multilabel(14) for stage 3.
HeadSpec head_for_stage(int stage);

nlohmann::json spec_to_json(const NetworkSpec& spec);
/// Accepts {"preset": name} or inline fields; missing inline fields take the densenet121 values.
NetworkSpec spec_from_json(const nlohmann::json& j);

struct SchedulerConfig {
    double factor = 0.1;
    int patience = 3;
    double min_lr = 0.0;
};

struct RunConfig {
    int stage = 2;
    NetworkSpec network;
    OptimizerConfig optimizer;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::string manifest;
    std::string output = "weights.xdxw";
    /// Defaults to `<output>.metrics.jsonl` when empty.
    std::string metrics_log;
    SchedulerConfig scheduler;
    /// Stop once training-set accuracy reaches this value; 0 disables.
    double stop_at_train_accuracy = 0.0;

    /// Stage defaults: Adam (lr 1e-3, wd 1e-5) for 10 epochs on stages 1-2,
    /// RAdam (lr 1e-4, wd 3e-4) for 15 epochs on stage 3; densenet121 network.
    static RunConfig defaults(int stage);
    /// Checks ranges and that the head matches the stage.
    void validate() const;
    std::string metrics_path() const;
};

/// Fields absent from `j` keep their stage defaults. A "head" entry, when
/// present, must match the stage.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& config);

struct ServeConfig {
    std::string stage1_weights;
    std::string stage2_weights;
    std::string stage3_weights;
    CascadeConfig cascade;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t max_body_bytes = 8u << 20;
    /// Fallback input size when a weight file has no sidecar spec.
    std::size_t input_size = 224;
};

ServeConfig serve_config_from_json(const nlohmann::json& j);
ServeConfig load_serve_config(const std::string& path);

std::string sidecar_path(const std::string& weights_path);
void write_sidecar(const std::string& weights_path, const NetworkSpec& spec);

/// Reads the weights, takes the architecture from the sidecar when present
/// (otherwise infers it, using `input_size`), forces `head` when given and
/// loads strictly.
Network load_network(const std::string& weights_path, std::optional<HeadSpec> head = std::nullopt,
                     std::size_t input_size = 224);

nlohmann::json read_json_file(const std::string& path);

}  // namespace xdx
