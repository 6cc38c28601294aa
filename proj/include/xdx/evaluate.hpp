#pragma once

// Per-stage evaluation behind `xdx eval`.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdx/metrics.hpp"
#include "xdx/model.hpp"
#include "xdx/train.hpp"

namespace xdx {

struct EvalReport {
    int stage = 1;
    std::size_t samples = 0;
    /// Stages 1 and 2.
    std::optional<double> accuracy;
    std::optional<ConfusionMatrix> confusion;
    /// Stage 3: every condition in order; auc is absent when the split holds a single class.
    std::vector<AucRow> auc_rows;
    std::map<std::string, RocCurve> roc;
    std::optional<double> multilabel_accuracy;
    /// Product of externally supplied stage accuracies.
    std::optional<double> end_to_end;
};

/// Stage-2 confusion matrices list only the types that occur among labels or predictions.
EvalReport evaluate(const Network& net, const StageDataset& data);

/// Loads weights (head forced by stage) and the test split, then evaluates.
EvalReport cli_eval(const std::string& weights, const std::string& manifest, int stage,
                    std::size_t input_size = 224);

nlohmann::json eval_to_json(const EvalReport& report);
std::string eval_to_text(const EvalReport& report);

}  // namespace xdx
