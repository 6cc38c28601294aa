#include "xdx/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

#include "xdx/image.hpp"
#include "xdx/metrics.hpp"
#include "xdx/rng.hpp"

namespace xdx {

namespace {

constexpr std::size_t kEvalChunk = 64;

bool has_stage_label(const SampleRecord& r, int stage) {
    switch (stage) {
        case 1: return true;
        case 2: return r.stage2.has_value();
        case 3: return r.stage3.has_value();
        default: throw std::invalid_argument("stage must be 1, 2 or 3");
    }
}

Tensor rows(const Tensor& images, std::span<const std::size_t> index) {
    const auto& shape = images.shape();
    const std::size_t plane = images.numel() / shape[0];
    std::vector<real> values(index.size() * plane);
    auto src = images.data();
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[i] * plane), plane,
                    values.begin() + static_cast<std::ptrdiff_t>(i * plane));
    Shape out = shape;
    out[0] = index.size();
    return Tensor(out, std::move(values));
}

Tensor batch_loss(const Tensor& logits, const StageDataset& data, std::span<const std::size_t> index) {
    switch (data.stage) {
        case 1: {
            std::vector<real> y;
            for (auto i : index) y.push_back(static_cast<real>(data.labels[i]));
            return bce_loss(logits, Tensor(logits.shape(), std::move(y)));
        }
        case 2: {
            std::vector<std::size_t> y;
            for (auto i : index) y.push_back(data.labels[i]);
            return ce_loss(logits, y);
        }
        default: {
            std::vector<real> y;
            for (auto i : index)
                for (int v : data.multilabels[i]) y.push_back(static_cast<real>(v));
            return bce_loss(logits, Tensor(logits.shape(), std::move(y)));
        }
    }
}

std::vector<std::size_t> iota_n(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v;
    for (std::size_t i = begin; i < end; ++i) v.push_back(i);
    return v;
}

}  // namespace

std::vector<SampleRecord> stage_records(const Manifest& manifest, int stage, Split split) {
    std::vector<SampleRecord> out;
    for (const auto& r : manifest.records)
        if (r.split == split && has_stage_label(r, stage)) out.push_back(r);
    return out;
}

StageDataset load_stage_dataset(const std::vector<SampleRecord>& records, const std::string& image_root, int stage,
                                std::size_t input_size) {
    StageDataset data;
    data.stage = stage;
    std::vector<Image> images;
    for (const auto& r : records) {
        if (!has_stage_label(r, stage))
            throw ManifestError("record " + r.path + " has no stage-" + std::to_string(stage) + " label");
        switch (stage) {
            case 1: data.labels.push_back(r.stage1 == Stage1Label::xray ? 1 : 0); break;
            case 2: data.labels.push_back(static_cast<std::size_t>(*r.stage2)); break;
            default: {
                std::vector<int> y(kConditionCount, 0);
                for (auto c : *r.stage3) y[static_cast<std::size_t>(c)] = 1;
                data.multilabels.push_back(std::move(y));
            }
        }
        const std::filesystem::path p(r.path);
        const std::string full = p.is_absolute() ? r.path : (std::filesystem::path(image_root) / p).string();
        images.push_back(read_image(full));
        data.paths.push_back(full);
    }
    data.images = preprocess_batch(images, input_size);
    return data;
}

double dataset_loss(const Network& net, const StageDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("dataset_loss on an empty dataset");
    NoGradGuard no_grad;
    double total = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
        const auto index = iota_n(begin, std::min(data.size(), begin + kEvalChunk));
        const Tensor logits = net.forward(rows(data.images, index));
        total += static_cast<double>(batch_loss(logits, data, index).item()) * static_cast<double>(index.size());
    }
    return total / static_cast<double>(data.size());
}

double dataset_accuracy(const Network& net, const StageDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("dataset_accuracy on an empty dataset");
    NoGradGuard no_grad;
    std::size_t correct = 0;
    std::vector<std::vector<double>> probs;
    for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
        const auto index = iota_n(begin, std::min(data.size(), begin + kEvalChunk));
        const Tensor logits = net.forward(rows(data.images, index));
        const std::size_t width = logits.numel() / index.size();
        auto z = logits.data();
        for (std::size_t i = 0; i < index.size(); ++i) {
            auto row = z.subspan(i * width, width);
            if (data.stage == 1) {
                correct += static_cast<std::size_t>((row[0] >= 0) == (data.labels[index[i]] == 1));
            } else if (data.stage == 2) {
                const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
                correct += static_cast<std::size_t>(best == data.labels[index[i]]);
            } else {
                std::vector<double> p;
                for (real v : row) p.push_back(stable_sigmoid(v));
                probs.push_back(std::move(p));
            }
        }
    }
    if (data.stage == 3) return multilabel_mean_accuracy(probs, data.multilabels);
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_network(const RunConfig& config, const StageDataset& train, const StageDataset* val,
                          const EpochCallback& on_epoch) {
    config.validate();
    if (train.size() == 0) throw std::invalid_argument("training split is empty");
    if (train.stage != config.stage)
        throw std::invalid_argument("dataset is for stage " + std::to_string(train.stage) + ", config for stage " +
                                    std::to_string(config.stage));
    if (val && val->size() == 0) val = nullptr;

    TrainResult result{build_network(config.network, config.seed), {}};
    Network& net = result.network;
    std::vector<Tensor> params = net.parameters();
    OptimizerState state = make_state(config.optimizer, params);
    PlateauScheduler scheduler{config.scheduler.factor, config.scheduler.patience, config.scheduler.min_lr};
    SplitMix64 rng(config.seed ^ 0x5eedf00dULL);

    std::vector<std::size_t> order = iota_n(0, train.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, rng);
        double total = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::span<const std::size_t> index(order.data() + begin,
                                                     std::min(config.batch_size, order.size() - begin));
            net.zero_grad();
            const Tensor logits = net.forward(rows(train.images, index), Mode::train);
            const Tensor loss = batch_loss(logits, train, index);
            loss.backward();
            optimizer_step(state, params);
            total += static_cast<double>(loss.item()) * static_cast<double>(index.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(train.size());
        if (val) rec.val_loss = dataset_loss(net, *val);
        rec.lr = state.config.lr;
        rec.train_accuracy = dataset_accuracy(net, train);
        scheduler.step(rec.val_loss.value_or(rec.train_loss), state);
        result.history.push_back(rec);
        spdlog::debug("epoch {} train_loss {:.6f} lr {:g} train_acc {:.4f}", epoch, rec.train_loss, rec.lr,
                      rec.train_accuracy);
        if (on_epoch) on_epoch(rec);
        if (config.stop_at_train_accuracy > 0 && rec.train_accuracy >= config.stop_at_train_accuracy) break;
    }
    net.zero_grad();
    return result;
}

std::string epoch_to_jsonl(const EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"lr", r.lr}};
    j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
    j["train_accuracy"] = r.train_accuracy;
    return j.dump();
}

TrainResult cli_train(const RunConfig& config) {
    config.validate();
    if (config.manifest.empty()) throw ConfigError("run config needs a manifest");
    const Manifest manifest = load_manifest(config.manifest);
    const std::string root = std::filesystem::path(config.manifest).parent_path().string();
    const auto train_records = stage_records(manifest, config.stage, Split::train);
    if (train_records.empty())
        throw ManifestError("manifest has no training records with stage-" + std::to_string(config.stage) + " labels");
    const StageDataset train = load_stage_dataset(train_records, root, config.stage, config.network.input_size);
    const auto val_records = stage_records(manifest, config.stage, Split::val);
    std::optional<StageDataset> val;
    if (!val_records.empty()) val = load_stage_dataset(val_records, root, config.stage, config.network.input_size);
    spdlog::info("stage {} training on {} images ({} validation)", config.stage, train.size(),
                 val ? val->size() : 0);

    std::ofstream log(config.metrics_path(), std::ios::trunc);
    if (!log) throw ConfigError("cannot write metrics log " + config.metrics_path());
    TrainResult result = train_network(config, train, val ? &*val : nullptr, [&](const EpochRecord& r) {
        log << epoch_to_jsonl(r) << '\n';
        log.flush();
        spdlog::info("epoch {}: train_loss {:.5f} lr {:g}", r.epoch, r.train_loss, r.lr);
    });
    save_weights(result.network, config.output);
    write_sidecar(config.output, config.network);
    return result;
}

}  // namespace xdx
