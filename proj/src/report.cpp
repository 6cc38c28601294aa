#include <iomanip>
#include <sstream>

#include "xdx/evaluate.hpp"

namespace xdx {

nlohmann::json eval_to_json(const EvalReport& r) {
    nlohmann::json j{{"stage", r.stage}, {"samples", r.samples}};
    j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    if (r.confusion)
        j["confusion_matrix"] = {{"classes", r.confusion->class_names}, {"counts", r.confusion->counts}};
    else
        j["confusion_matrix"] = nullptr;
    if (r.stage == 3) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : r.auc_rows)
            rows.push_back({{"condition", row.condition},
                            {"auc", row.auc ? nlohmann::json(*row.auc) : nlohmann::json(nullptr)},
                            {"reference", row.reference ? nlohmann::json(*row.reference) : nlohmann::json(nullptr)}});
        j["auc"] = rows;
        j["multilabel_accuracy"] = *r.multilabel_accuracy;
    }
    j["end_to_end"] = r.end_to_end ? nlohmann::json(*r.end_to_end) : nlohmann::json(nullptr);
    return j;
}

std::string eval_to_text(const EvalReport& r) {
    std::ostringstream out;
    out << "stage " << r.stage << ", " << r.samples << " test images\n";
    out << std::fixed << std::setprecision(4);
    if (r.accuracy) out << "accuracy " << *r.accuracy << '\n';
    if (r.confusion) out << '\n' << format_confusion_matrix(*r.confusion);
    if (r.multilabel_accuracy) out << "mean per-label accuracy " << *r.multilabel_accuracy << "\n\n";
    if (!r.auc_rows.empty()) out << format_auc_table(r.auc_rows);
    if (r.end_to_end) out << "\nend-to-end accuracy " << *r.end_to_end << '\n';
    return out.str();
}

}  // namespace xdx
