#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xdx {

/// Rows are actual classes, columns predicted.
struct ConfusionMatrix {
    std::vector<std::string> class_names;
    std::vector<std::vector<std::uint64_t>> counts;

    std::uint64_t total() const;
    std::vector<std::uint64_t> row_sums() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> actual, std::span<const std::size_t> predicted,
                                 std::vector<std::string> class_names);
/// Name-based overload; unknown labels are rejected.
ConfusionMatrix confusion_matrix(std::span<const std::string> actual, std::span<const std::string> predicted,
                                 std::vector<std::string> class_names);
/// Builds a matrix directly from counts (rows actual, columns predicted).
ConfusionMatrix confusion_matrix_from_counts(std::vector<std::string> class_names,
                                             std::vector<std::vector<std::uint64_t>> counts);

/// trace / total; throws on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

class UndefinedAucError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RocPoint {
    double fpr = 0;
    double tpr = 0;
    double threshold = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0;
};

/// Sweeps thresholds over distinct scores in descending order (equal scores
/// form one step) and integrates with the trapezoid rule. The area is
/// accumulated in integers, so it equals the Mann-Whitney statistic exactly.
/// Throws UndefinedAucError when only one class is present.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Mean over labels of per-label accuracy; prediction is positive when prob >= threshold.
double multilabel_mean_accuracy(const std::vector<std::vector<double>>& probs,
                                const std::vector<std::vector<int>>& targets, double threshold = 0.5);

/// Product of stage accuracies.
double end_to_end_accuracy(double stage1, double stage2, double stage3);

struct AucRow {
    std::string condition;
    std::optional<double> auc;        // absent when the condition could not be scored
    std::optional<double> reference;  // full-scale reference value, for side-by-side comparison
};

/// Rows in the fixed chest-condition order, restricted to conditions present in `curves`.
std::vector<AucRow> auc_table(const std::map<std::string, RocCurve>& curves);
/// Reference AUCs for the 14 chest conditions from full-scale models.
const std::map<std::string, double>& reference_aucs();

std::string format_confusion_matrix(const ConfusionMatrix& cm);
std::string format_auc_table(const std::vector<AucRow>& rows);
/// "fpr,tpr,threshold" rows with a header line.
std::string roc_to_csv(const RocCurve& curve);

}  // namespace xdx
