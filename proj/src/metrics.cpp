#include "xdx/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "xdx/data.hpp"

namespace xdx {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

std::vector<std::uint64_t> ConfusionMatrix::row_sums() const {
    std::vector<std::uint64_t> sums;
    for (const auto& row : counts) sums.push_back(std::accumulate(row.begin(), row.end(), std::uint64_t{0}));
    return sums;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> actual, std::span<const std::size_t> predicted,
                                 std::vector<std::string> class_names) {
    if (actual.size() != predicted.size())
        throw std::invalid_argument("confusion_matrix: " + std::to_string(actual.size()) + " actual vs " +
                                    std::to_string(predicted.size()) + " predicted labels");
    const std::size_t n = class_names.size();
    ConfusionMatrix cm{std::move(class_names), std::vector<std::vector<std::uint64_t>>(n, std::vector<std::uint64_t>(n))};
    for (std::size_t k = 0; k < actual.size(); ++k) {
        if (actual[k] >= n || predicted[k] >= n)
            throw std::invalid_argument("confusion_matrix: label index out of range at sample " + std::to_string(k));
        ++cm.counts[actual[k]][predicted[k]];
    }
    return cm;
}

ConfusionMatrix confusion_matrix(std::span<const std::string> actual, std::span<const std::string> predicted,
                                 std::vector<std::string> class_names) {
    auto index = [&](const std::string& label) {
        auto it = std::find(class_names.begin(), class_names.end(), label);
        if (it == class_names.end()) throw std::invalid_argument("confusion_matrix: unknown label '" + label + "'");
        return static_cast<std::size_t>(it - class_names.begin());
    };
    std::vector<std::size_t> a, p;
    for (const auto& l : actual) a.push_back(index(l));
    for (const auto& l : predicted) p.push_back(index(l));
    return confusion_matrix(a, p, std::move(class_names));
}

ConfusionMatrix confusion_matrix_from_counts(std::vector<std::string> class_names,
                                             std::vector<std::vector<std::uint64_t>> counts) {
    if (counts.size() != class_names.size())
        throw std::invalid_argument("confusion matrix needs one row per class");
    for (const auto& row : counts)
        if (row.size() != class_names.size())
            throw std::invalid_argument("confusion matrix needs one column per class");
    return {std::move(class_names), std::move(counts)};
}

double accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
    std::uint64_t trace = 0;
    for (std::size_t i = 0; i < cm.counts.size(); ++i) trace += cm.counts[i][i];
    return static_cast<double>(trace) / static_cast<double>(total);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("roc_curve: scores and labels differ in length");
    std::uint64_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l == 1)
            ++pos;
        else if (l == 0)
            ++neg;
        else
            throw std::invalid_argument("roc_curve: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) throw UndefinedAucError("AUC undefined: input contains a single class");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    // Twice the area, in units of one (positive, negative) pair.
    std::uint64_t area2 = 0, tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::uint64_t dp = 0, dn = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? dp : dn) += 1;
        area2 += dn * (2 * tp + dp);
        tp += dp;
        fp += dn;
        curve.points.push_back(
            {static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos), s});
    }
    curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return curve;
}

double multilabel_mean_accuracy(const std::vector<std::vector<double>>& probs,
                                const std::vector<std::vector<int>>& targets, double threshold) {
    if (probs.size() != targets.size()) throw std::invalid_argument("multilabel accuracy: sample counts differ");
    if (probs.empty()) throw std::invalid_argument("multilabel accuracy: no samples");
    const std::size_t labels = probs.front().size();
    if (labels == 0) throw std::invalid_argument("multilabel accuracy: no labels");
    std::vector<std::uint64_t> correct(labels, 0);
    for (std::size_t s = 0; s < probs.size(); ++s) {
        if (probs[s].size() != labels || targets[s].size() != labels)
            throw std::invalid_argument("multilabel accuracy: sample " + std::to_string(s) + " has the wrong width");
        for (std::size_t l = 0; l < labels; ++l) {
            const int predicted = probs[s][l] >= threshold ? 1 : 0;
            if (predicted == targets[s][l]) ++correct[l];
        }
    }
    double total = 0;
    for (auto c : correct) total += static_cast<double>(c) / static_cast<double>(probs.size());
    return total / static_cast<double>(labels);
}

double end_to_end_accuracy(double stage1, double stage2, double stage3) {
    for (double a : {stage1, stage2, stage3})
        if (!(a >= 0 && a <= 1)) throw std::invalid_argument("end_to_end_accuracy: accuracies must lie in [0,1]");
    return stage1 * stage2 * stage3;
}

const std::map<std::string, double>& reference_aucs() {
    static const std::map<std::string, double> values{
        {"Atelectasis", 0.81},   {"Cardiomegaly", 0.91}, {"Effusion", 0.87},      {"Infiltration", 0.72},
        {"Mass", 0.85},          {"Nodule", 0.78},       {"Pneumonia", 0.74},     {"Pneumothorax", 0.90},
        {"Consolidation", 0.79}, {"Edema", 0.91},        {"Emphysema", 0.92},     {"Fibrosis", 0.81},
        {"Pleural Thickening", 0.79}, {"Hernia", 0.99}};
    return values;
}

std::vector<AucRow> auc_table(const std::map<std::string, RocCurve>& curves) {
    std::vector<AucRow> rows;
    for (const auto& name : condition_names()) {
        auto it = curves.find(name);
        if (it == curves.end()) continue;
        rows.push_back({name, it->second.auc, reference_aucs().at(name)});
    }
    return rows;
}

std::string format_confusion_matrix(const ConfusionMatrix& cm) {
    std::size_t label_width = std::string_view("actual\\pred").size(), cell_width = 6;
    for (const auto& n : cm.class_names) {
        label_width = std::max(label_width, n.size());
        cell_width = std::max(cell_width, n.size());
    }
    for (const auto& row : cm.counts)
        for (auto c : row) cell_width = std::max(cell_width, std::to_string(c).size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(label_width)) << "actual\\pred";
    for (const auto& n : cm.class_names) out << ' ' << std::right << std::setw(static_cast<int>(cell_width)) << n;
    out << '\n';
    for (std::size_t i = 0; i < cm.counts.size(); ++i) {
        out << std::left << std::setw(static_cast<int>(label_width)) << cm.class_names[i];
        for (auto c : cm.counts[i]) out << ' ' << std::right << std::setw(static_cast<int>(cell_width)) << c;
        out << '\n';
    }
    return out.str();
}

std::string format_auc_table(const std::vector<AucRow>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(20) << "condition" << std::right << std::setw(10) << "AUC" << std::setw(12)
        << "reference" << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        out << std::left << std::setw(20) << r.condition << std::right << std::setw(10);
        if (r.auc)
            out << *r.auc;
        else
            out << "n/a";
        out << std::setw(12);
        if (r.reference)
            out << std::setprecision(2) << *r.reference << std::setprecision(4);
        else
            out << "-";
        out << '\n';
    }
    return out.str();
}

std::string roc_to_csv(const RocCurve& curve) {
    std::ostringstream out;
    out << "fpr,tpr,threshold\n" << std::setprecision(17);
    for (const auto& p : curve.points) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
    return out.str();
}

}  // namespace xdx
