#include "xdx/evaluate.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

namespace xdx {

EvalReport evaluate(const Network& net, const StageDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("evaluation split is empty");
    if (!(net.spec().head == head_for_stage(data.stage)))
        throw std::invalid_argument("network head " + to_string(net.spec().head) + " does not fit stage " +
                                    std::to_string(data.stage));
    EvalReport report;
    report.stage = data.stage;
    report.samples = data.size();

    std::vector<std::vector<double>> outputs;
    {
        NoGradGuard no_grad;
        const std::size_t plane = data.images.numel() / data.size();
        auto all = data.images.data();
        for (std::size_t begin = 0; begin < data.size(); begin += 64) {
            const std::size_t n = std::min<std::size_t>(64, data.size() - begin);
            Shape shape = data.images.shape();
            shape[0] = n;
            auto chunk = all.subspan(begin * plane, n * plane);
            const Tensor logits = net.forward(Tensor(shape, std::vector<real>(chunk.begin(), chunk.end())));
            const std::size_t width = logits.numel() / n;
            for (std::size_t i = 0; i < n; ++i) {
                auto row = logits.data().subspan(i * width, width);
                outputs.emplace_back(row.begin(), row.end());
            }
        }
    }

    if (data.stage == 1) {
        std::vector<std::size_t> predicted;
        for (const auto& z : outputs) predicted.push_back(z[0] >= 0 ? 1 : 0);
        report.confusion = confusion_matrix(data.labels, predicted, {"other", "xray"});
        report.accuracy = accuracy(*report.confusion);
    } else if (data.stage == 2) {
        std::vector<std::size_t> predicted;
        for (const auto& z : outputs)
            predicted.push_back(static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()));
        std::set<std::size_t> seen(data.labels.begin(), data.labels.end());
        seen.insert(predicted.begin(), predicted.end());
        const std::vector<std::size_t> used(seen.begin(), seen.end());
        auto compact = [&](std::size_t t) {
            return static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), t) - used.begin());
        };
        std::vector<std::size_t> a, p;
        for (auto t : data.labels) a.push_back(compact(t));
        for (auto t : predicted) p.push_back(compact(t));
        std::vector<std::string> names;
        for (auto t : used) names.push_back(xray_type_names()[t]);
        report.confusion = confusion_matrix(a, p, names);
        report.accuracy = accuracy(*report.confusion);
    } else {
        std::vector<std::vector<double>> probs;
        for (const auto& z : outputs) {
            std::vector<double> p;
            for (double v : z) p.push_back(stable_sigmoid(static_cast<real>(v)));
            probs.push_back(std::move(p));
        }
        report.multilabel_accuracy = multilabel_mean_accuracy(probs, data.multilabels);
        for (std::size_t c = 0; c < kConditionCount; ++c) {
            std::vector<double> scores;
            std::vector<int> labels;
            for (std::size_t i = 0; i < probs.size(); ++i) {
                scores.push_back(probs[i][c]);
                labels.push_back(data.multilabels[i][c]);
            }
            const std::string& name = condition_names()[c];
            AucRow row{name, std::nullopt, reference_aucs().at(name)};
            try {
                auto curve = roc_curve(scores, labels);
                row.auc = curve.auc;
                report.roc.emplace(name, std::move(curve));
            } catch (const UndefinedAucError&) {
            }
            report.auc_rows.push_back(std::move(row));
        }
    }
    return report;
}

EvalReport cli_eval(const std::string& weights, const std::string& manifest_path, int stage, std::size_t input_size) {
    const Network net = load_network(weights, head_for_stage(stage), input_size);
    const Manifest manifest = load_manifest(manifest_path);
    const auto records = stage_records(manifest, stage, Split::test);
    if (records.empty())
        throw ManifestError("manifest has no test records with stage-" + std::to_string(stage) + " labels");
    const std::string root = std::filesystem::path(manifest_path).parent_path().string();
    return evaluate(net, load_stage_dataset(records, root, stage, net.spec().input_size));
}

}  // namespace xdx
