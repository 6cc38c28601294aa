#pragma once

// Stage datasets and the training loop behind `xdx train`.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xdx/config.hpp"
#include "xdx/data.hpp"

namespace xdx {

/// Preprocessed images and stage targets for one split.
struct StageDataset {
    int stage = 1;
    Tensor images;  // [N,1,S,S]
    /// Stage 1: 0/1 X-ray flag. Stage 2: type index.
    std::vector<std::size_t> labels;
    /// Stage 3: one 0/1 vector per sample, in condition order.
    std::vector<std::vector<int>> multilabels;
    std::vector<std::string> paths;

    std::size_t size() const { return paths.size(); }
};

/// Records usable by `stage`: all records for stage 1, records with a type for
/// stage 2, chest records with condition lists for stage 3. Relative image
/// paths resolve against `image_root`. Throws ManifestError when a record
/// lacks the stage's label.
StageDataset load_stage_dataset(const std::vector<SampleRecord>& records, const std::string& image_root, int stage,
                                std::size_t input_size);
/// Records of `split` that carry the stage's label.
std::vector<SampleRecord> stage_records(const Manifest& manifest, int stage, Split split);

/// Mean loss of `net` on `data` in infer mode.
double dataset_loss(const Network& net, const StageDataset& data);
/// Accuracy in infer mode: threshold 0.5 for stage 1, argmax for stage 2,
/// mean per-label accuracy for stage 3.
double dataset_accuracy(const Network& net, const StageDataset& data);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    std::optional<double> val_loss;  // absent when the validation split is empty
    double lr = 0;
    double train_accuracy = 0;
};

struct TrainResult {
    Network network;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training in train mode with a per-epoch seeded shuffle. The
/// scheduler steps on validation loss, or on training loss when there is no
/// validation data.
TrainResult train_network(const RunConfig& config, const StageDataset& train, const StageDataset* val,
                          const EpochCallback& on_epoch = {});

/// Loads the manifest, trains, then writes the weights, the sidecar spec and
/// the JSON-Lines metrics log.
TrainResult cli_train(const RunConfig& config);

std::string epoch_to_jsonl(const EpochRecord& record);

}  // namespace xdx
