// xdx: split, train, eval, predict, serve and synth entry points.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "xdx/config.hpp"
#include "xdx/data.hpp"
#include "xdx/evaluate.hpp"
#include "xdx/service.hpp"
#include "xdx/synthetic.hpp"
#include "xdx/train.hpp"

namespace {

std::vector<double> parse_reals(const std::string& text, std::size_t expected, const char* what) {
    std::vector<double> values;
    std::istringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw CLI::ValidationError(what, "'" + item + "' is not a number");
        values.push_back(v);
    }
    if (values.size() != expected)
        throw CLI::ValidationError(what, "expected " + std::to_string(expected) + " comma-separated values");
    return values;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

xdx::InferenceService* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
    xdx::configure_logging();
    CLI::App app{"Cascaded X-ray classification: training, evaluation and serving"};
    app.require_subcommand(1);

    // split
    auto* split = app.add_subcommand("split", "Assign train/val/test splits to a manifest");
    std::string split_manifest, split_output, split_ratios = "0.7,0.2,0.1";
    std::uint64_t split_seed = 0;
    split->add_option("--manifest", split_manifest, "Manifest (JSON Lines)")->required();
    split->add_option("--seed", split_seed, "Shuffle seed")->required();
    split->add_option("--ratios", split_ratios, "train,val,test fractions");
    split->add_option("--output", split_output, "Output manifest (default: rewrite --manifest)");

    // train
    auto* train = app.add_subcommand("train", "Train one cascade stage");
    std::string train_config;
    std::optional<int> t_stage;
    std::optional<std::size_t> t_epochs, t_batch;
    std::optional<std::uint64_t> t_seed;
    std::optional<double> t_lr, t_wd, t_stop;
    std::optional<std::string> t_manifest, t_output, t_metrics, t_optimizer, t_preset;
    std::optional<std::size_t> t_input;
    train->add_option("--config", train_config, "Run config (JSON)");
    train->add_option("--stage", t_stage, "Stage 1, 2 or 3");
    train->add_option("--epochs", t_epochs);
    train->add_option("--batch-size", t_batch);
    train->add_option("--seed", t_seed);
    train->add_option("--lr", t_lr);
    train->add_option("--weight-decay", t_wd);
    train->add_option("--optimizer", t_optimizer, "adam or radam");
    train->add_option("--preset", t_preset, "densenet121 or toy");
    train->add_option("--input-size", t_input);
    train->add_option("--manifest", t_manifest);
    train->add_option("--output", t_output, "Weight file to write");
    train->add_option("--metrics-log", t_metrics);
    train->add_option("--stop-at-train-accuracy", t_stop);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a stage on the test split");
    std::string e_weights, e_manifest, e_json, e_roc_dir, e_stage_acc;
    int e_stage = 0;
    std::size_t e_input = 224;
    eval->add_option("--weights", e_weights)->required();
    eval->add_option("--manifest", e_manifest)->required();
    eval->add_option("--stage", e_stage)->required()->check(CLI::Range(1, 3));
    eval->add_option("--input-size", e_input, "Used when the weights have no sidecar spec");
    eval->add_option("--json", e_json, "Write the JSON report here (default: stdout)");
    eval->add_option("--roc-dir", e_roc_dir, "Write one ROC CSV per condition (stage 3)");
    eval->add_option("--stage-accuracies", e_stage_acc, "acc1,acc2,acc3 for the end_to_end field");

    // predict
    auto* predict = app.add_subcommand("predict", "Run the full cascade on one image");
    std::string p_image, p_config, p_explain;
    std::optional<std::string> p_w1, p_w2, p_w3;
    std::optional<double> p_t1, p_t3;
    predict->add_option("--image", p_image)->required();
    predict->add_option("--config", p_config, "Serve config naming the stage weights");
    predict->add_option("--stage1-weights", p_w1);
    predict->add_option("--stage2-weights", p_w2);
    predict->add_option("--stage3-weights", p_w3);
    predict->add_option("--stage1-threshold", p_t1);
    predict->add_option("--stage3-threshold", p_t3);
    predict->add_option("--explain", p_explain, "CLASS[,CLASS...], positives or all");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the cascade over HTTP");
    std::string s_config;
    std::optional<int> s_port;
    std::optional<std::string> s_host;
    std::optional<std::size_t> s_limit;
    serve->add_option("--config", s_config)->required();
    serve->add_option("--port", s_port);
    serve->add_option("--host", s_host);
    serve->add_option("--max-body-bytes", s_limit);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus and manifest");
    std::string y_dir;
    xdx::CorpusOptions y_opts;
    std::string y_types = "Chest,Wrist,Hand";
    synth->add_option("--dir", y_dir)->required();
    synth->add_option("--size", y_opts.image_size);
    synth->add_option("--per-type", y_opts.per_type);
    synth->add_option("--others", y_opts.others, "Number of non-radiograph images");
    synth->add_option("--types", y_types, "Comma-separated radiograph types");
    synth->add_option("--condition-rate", y_opts.condition_rate);
    synth->add_option("--seed", y_opts.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*split) {
            const auto r = parse_reals(split_ratios, 3, "--ratios");
            const xdx::Manifest out = xdx::split_dataset(xdx::load_manifest(split_manifest), split_seed, {r[0], r[1], r[2]});
            xdx::save_manifest(out, split_output.empty() ? split_manifest : split_output);
            const auto c = xdx::split_counts(out.size(), {r[0], r[1], r[2]});
            std::cout << "train " << c.train << " val " << c.val << " test " << c.test << '\n';
        } else if (*train) {
            if (train_config.empty() && !t_stage) throw xdx::ConfigError("train needs --config or --stage");
            xdx::RunConfig cfg = train_config.empty() ? xdx::RunConfig::defaults(*t_stage)
                                                      : xdx::load_run_config(train_config);
            if (t_stage && *t_stage != cfg.stage) {
                const auto network = cfg.network;
                cfg.stage = *t_stage;
                cfg.network = network;
                cfg.network.head = xdx::head_for_stage(cfg.stage);
            }
            if (t_preset) cfg.network = xdx::NetworkSpec::preset(*t_preset, cfg.network.head);
            if (t_input) cfg.network.input_size = *t_input;
            if (t_optimizer) {
                const auto kind = xdx::parse_optimizer_kind(*t_optimizer);
                if (kind != cfg.optimizer.kind)
                    cfg.optimizer = kind == xdx::OptimizerKind::radam ? xdx::OptimizerConfig::radam_defaults()
                                                                      : xdx::OptimizerConfig::adam_defaults();
            }
            if (t_lr) cfg.optimizer.lr = *t_lr;
            if (t_wd) cfg.optimizer.weight_decay = *t_wd;
            if (t_epochs) cfg.epochs = *t_epochs;
            if (t_batch) cfg.batch_size = *t_batch;
            if (t_seed) cfg.seed = *t_seed;
            if (t_manifest) cfg.manifest = *t_manifest;
            if (t_output) cfg.output = *t_output;
            if (t_metrics) cfg.metrics_log = *t_metrics;
            if (t_stop) cfg.stop_at_train_accuracy = *t_stop;
            const auto result = xdx::cli_train(cfg);
            const auto& last = result.history.back();
            std::cout << "wrote " << cfg.output << " after " << last.epoch << " epochs (train loss " << last.train_loss
                      << ", train accuracy " << last.train_accuracy << ")\n";
        } else if (*eval) {
            auto report = xdx::cli_eval(e_weights, e_manifest, e_stage, e_input);
            if (!e_stage_acc.empty()) {
                const auto a = parse_reals(e_stage_acc, 3, "--stage-accuracies");
                report.end_to_end = xdx::end_to_end_accuracy(a[0], a[1], a[2]);
            }
            std::cerr << xdx::eval_to_text(report);
            const std::string json = xdx::eval_to_json(report).dump(2) + "\n";
            if (e_json.empty())
                std::cout << json;
            else
                write_text(e_json, json);
            if (!e_roc_dir.empty()) {
                std::filesystem::create_directories(e_roc_dir);
                for (const auto& [name, curve] : report.roc) {
                    std::string file = name;
                    std::replace(file.begin(), file.end(), ' ', '_');
                    write_text((std::filesystem::path(e_roc_dir) / (file + ".csv")).string(), xdx::roc_to_csv(curve));
                }
            }
        } else if (*predict) {
            xdx::ServeConfig cfg;
            if (!p_config.empty()) cfg = xdx::load_serve_config(p_config);
            if (p_w1) cfg.stage1_weights = *p_w1;
            if (p_w2) cfg.stage2_weights = *p_w2;
            if (p_w3) cfg.stage3_weights = *p_w3;
            if (p_t1) cfg.cascade.stage1_threshold = *p_t1;
            if (p_t3) cfg.cascade.stage3_threshold = *p_t3;
            if (!p_explain.empty()) xdx::parse_explain(p_explain, cfg.cascade);
            const auto backend = xdx::load_backend(cfg);
            const auto report = xdx::run_cascade(xdx::read_image(p_image), *backend, cfg.cascade);
            std::cout << xdx::report_to_json(report).dump(2) << '\n';
        } else if (*serve) {
            xdx::ServeConfig cfg = xdx::load_serve_config(s_config);
            if (s_port) cfg.port = *s_port;
            if (s_host) cfg.host = *s_host;
            if (s_limit) cfg.max_body_bytes = *s_limit;
            auto backend = xdx::load_backend(cfg);
            xdx::InferenceService service(backend, cfg, xdx::models_metadata(cfg, *backend));
            const int port = service.bind();
            g_service = &service;
            std::signal(SIGINT, [](int) {
                if (g_service) g_service->stop();
            });
            std::signal(SIGTERM, [](int) {
                if (g_service) g_service->stop();
            });
            spdlog::info("serving on {}:{}", cfg.host, port);
            service.run();
            g_service = nullptr;
        } else if (*synth) {
            y_opts.types.clear();
            std::istringstream in(y_types);
            for (std::string item; std::getline(in, item, ',');) {
                auto t = xdx::parse_xray_type(item);
                if (!t) throw CLI::ValidationError("--types", "unknown type '" + item + "'");
                y_opts.types.push_back(*t);
            }
            const auto manifest = xdx::write_synthetic_corpus(y_dir, y_opts);
            std::cout << "wrote " << manifest.size() << " images to " << y_dir << '\n';
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
