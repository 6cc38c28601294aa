#include "xdx/config.hpp"

#include <filesystem>
#include <fstream>

#include "xdx/data.hpp"

namespace xdx {

namespace {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key) || j[key].is_null()) return;
    try {
        out = j[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed) known = known || item.key() == k;
        if (!known) throw ConfigError(std::string("unknown field '") + item.key() + "' in " + where);
    }
}

}  // namespace

HeadSpec head_for_stage(int stage) {
    switch (stage) {
        case 1: return HeadSpec::binary();
        case 2: return HeadSpec::softmax(kXrayTypeCount);
        case 3: return HeadSpec::multilabel(kConditionCount);
        default: throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
    }
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
    return {{"init_channels", spec.init_channels}, {"growth_rate", spec.growth_rate},
            {"block_sizes", spec.block_sizes},     {"input_size", spec.input_size},
            {"head", to_string(spec.head)}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    if (j.is_string()) return NetworkSpec::preset(j.get<std::string>(), HeadSpec::binary());
    check_keys(j, {"preset", "init_channels", "growth_rate", "block_sizes", "input_size", "head"}, "network");
    NetworkSpec spec = NetworkSpec::densenet121(HeadSpec::binary());
    if (j.contains("preset")) spec = NetworkSpec::preset(j["preset"].get<std::string>(), HeadSpec::binary());
    take(j, "init_channels", spec.init_channels);
    take(j, "growth_rate", spec.growth_rate);
    take(j, "block_sizes", spec.block_sizes);
    take(j, "input_size", spec.input_size);
    if (j.contains("head")) spec.head = parse_head(j["head"].get<std::string>());
    return spec;
}

RunConfig RunConfig::defaults(int stage) {
    RunConfig c;
    c.stage = stage;
    c.network = NetworkSpec::densenet121(head_for_stage(stage));
    if (stage == 3) {
        c.optimizer = OptimizerConfig::radam_defaults();
        c.epochs = 15;
    } else {
        c.optimizer = OptimizerConfig::adam_defaults();
        c.epochs = 10;
    }
    return c;
}

void RunConfig::validate() const {
    const HeadSpec expected = head_for_stage(stage);
    if (!(network.head == expected))
        throw ConfigError("stage " + std::to_string(stage) + " requires head " + to_string(expected) + ", got " +
                          to_string(network.head));
    try {
        network.validate();
        optimizer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(scheduler.factor > 0 && scheduler.factor < 1)) throw ConfigError("scheduler.factor must lie in (0,1)");
    if (scheduler.patience < 0) throw ConfigError("scheduler.patience must be nonnegative");
    if (!(stop_at_train_accuracy >= 0 && stop_at_train_accuracy <= 1))
        throw ConfigError("stop_at_train_accuracy must lie in [0,1]");
}

std::string RunConfig::metrics_path() const { return metrics_log.empty() ? output + ".metrics.jsonl" : metrics_log; }

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"stage", "network", "optimizer", "epochs", "batch_size", "seed", "manifest", "output", "metrics_log",
                "scheduler", "stop_at_train_accuracy"},
               "run config");
    int stage = 0;
    take(j, "stage", stage);
    if (stage == 0) throw ConfigError("run config needs a stage");
    RunConfig c = RunConfig::defaults(stage);

    if (j.contains("network")) {
        const auto& n = j["network"];
        const bool head_given = n.is_object() && n.contains("head");
        c.network = spec_from_json(n);
        if (!head_given) c.network.head = head_for_stage(stage);
    }
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        check_keys(o, {"kind", "lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
        if (o.contains("kind")) {
            // Switching kind starts from that kind's defaults.
            const auto kind = parse_optimizer_kind(o["kind"].get<std::string>());
            if (kind != c.optimizer.kind)
                c.optimizer = kind == OptimizerKind::radam ? OptimizerConfig::radam_defaults()
                                                           : OptimizerConfig::adam_defaults();
        }
        take(o, "lr", c.optimizer.lr);
        take(o, "beta1", c.optimizer.beta1);
        take(o, "beta2", c.optimizer.beta2);
        take(o, "eps", c.optimizer.eps);
        take(o, "weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("scheduler")) {
        const auto& s = j["scheduler"];
        check_keys(s, {"factor", "patience", "min_lr"}, "scheduler");
        take(s, "factor", c.scheduler.factor);
        take(s, "patience", c.scheduler.patience);
        take(s, "min_lr", c.scheduler.min_lr);
    }
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "seed", c.seed);
    take(j, "manifest", c.manifest);
    take(j, "output", c.output);
    take(j, "metrics_log", c.metrics_log);
    take(j, "stop_at_train_accuracy", c.stop_at_train_accuracy);
    c.validate();
    return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json network = spec_to_json(c.network);
    if (c.network.preset_name() != "custom") network["preset"] = c.network.preset_name();
    return {{"stage", c.stage},
            {"network", network},
            {"optimizer",
             {{"kind", to_string(c.optimizer.kind)},
              {"lr", c.optimizer.lr},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps},
              {"weight_decay", c.optimizer.weight_decay}}},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"manifest", c.manifest},
            {"output", c.output},
            {"metrics_log", c.metrics_log},
            {"scheduler",
             {{"factor", c.scheduler.factor}, {"patience", c.scheduler.patience}, {"min_lr", c.scheduler.min_lr}}},
            {"stop_at_train_accuracy", c.stop_at_train_accuracy}};
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

ServeConfig serve_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"stage1_weights", "stage2_weights", "stage3_weights", "stage1_threshold", "stage3_threshold",
                "explain", "host", "port", "max_body_bytes", "input_size"},
               "serve config");
    ServeConfig c;
    take(j, "stage1_weights", c.stage1_weights);
    take(j, "stage2_weights", c.stage2_weights);
    take(j, "stage3_weights", c.stage3_weights);
    take(j, "stage1_threshold", c.cascade.stage1_threshold);
    take(j, "stage3_threshold", c.cascade.stage3_threshold);
    if (j.contains("explain")) parse_explain(j["explain"].get<std::string>(), c.cascade);
    take(j, "host", c.host);
    take(j, "port", c.port);
    take(j, "max_body_bytes", c.max_body_bytes);
    take(j, "input_size", c.input_size);
    try {
        c.cascade.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

ServeConfig load_serve_config(const std::string& path) {
    ServeConfig c = serve_config_from_json(read_json_file(path));
    // Relative weight paths are taken relative to the config file.
    const auto base = std::filesystem::path(path).parent_path();
    for (auto* p : {&c.stage1_weights, &c.stage2_weights, &c.stage3_weights})
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
    return c;
}

std::string sidecar_path(const std::string& weights_path) { return weights_path + ".spec.json"; }

void write_sidecar(const std::string& weights_path, const NetworkSpec& spec) {
    const std::string path = sidecar_path(weights_path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out << spec_to_json(spec).dump(2) << '\n';
    if (!out) throw ConfigError("failed writing " + path);
}

Network load_network(const std::string& weights_path, std::optional<HeadSpec> head, std::size_t input_size) {
    const auto arrays = read_weight_file(weights_path);
    NetworkSpec spec;
    if (std::filesystem::exists(sidecar_path(weights_path)))
        spec = spec_from_json(read_json_file(sidecar_path(weights_path)));
    else
        spec = infer_spec(arrays, input_size);
    if (head) spec.head = *head;
    spec.validate();
    Network net = build_network(spec, 0);
    apply_weights(net, arrays, LoadMode::strict);
    return net;
}

}  // namespace xdx
