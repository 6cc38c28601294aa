#pragma once

// Staged diagnosis: X-ray gate, type routing, per-type abnormality scoring
// and optional Grad-CAM explanations.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdx/data.hpp"
#include "xdx/explain.hpp"
#include "xdx/image.hpp"
#include "xdx/model.hpp"

namespace xdx {

inline constexpr const char* kNoteNotXray = "not an X-ray";
inline constexpr const char* kNoteNoAbnormalityModel = "no abnormality model for this type";

enum class ExplainMode { none, positives, all, classes };

struct CascadeConfig {
    double stage1_threshold = 0.5;
    double stage3_threshold = 0.5;
    ExplainMode explain = ExplainMode::none;
    /// Used when explain == ExplainMode::classes.
    std::vector<Condition> explain_classes;

    /// Thresholds must lie in (0,1).
    void validate() const;
};

/// "none", "positives", "all", or a comma-separated list of condition names.
void parse_explain(const std::string& text, CascadeConfig& config);

struct Stage1Result {
    bool is_xray = false;
    double p_xray = 0.0;
};

struct Stage2Result {
    XrayType type = XrayType::Chest;
    std::vector<double> probs;  // one per XrayType
};

struct Stage3Result {
    std::vector<double> probs;  // one per Condition
    std::vector<Condition> positive;
};

struct CascadeReport {
    Stage1Result stage1;
    std::optional<Stage2Result> stage2;
    std::optional<Stage3Result> stage3;
    /// Present whenever stage 3 ran with an explain mode other than none (possibly empty).
    std::optional<std::map<std::string, Heatmap>> explanations;
    std::vector<std::string> notes;
};

nlohmann::json report_to_json(const CascadeReport& report);

/// Empty when the report obeys the stage-presence, probability and positivity
/// rules for `config`; otherwise the first violated rule.
std::string check_report(const CascadeReport& report, const CascadeConfig& config);

/// Model outputs the router consumes. Implementations must be safe to call
/// concurrently.
class CascadeBackend {
public:
    virtual ~CascadeBackend() = default;
    virtual double xray_probability(const Image& image) const = 0;
    virtual std::vector<double> type_probabilities(const Image& image) const = 0;
    virtual bool has_abnormality_model(XrayType type) const = 0;
    virtual std::vector<double> abnormality_probabilities(XrayType type, const Image& image) const = 0;
    virtual Heatmap explain(XrayType type, const Image& image, Condition condition) const = 0;
};

/// Network-backed stages. Abnormality models are registered per type; only
/// chest models exist today.
class NetworkBackend final : public CascadeBackend {
public:
    NetworkBackend(Network stage1, Network stage2);
    /// Throws when a model is already registered for `type` or the head is not multilabel(14).
    void register_abnormality_model(XrayType type, Network model);

    double xray_probability(const Image& image) const override;
    std::vector<double> type_probabilities(const Image& image) const override;
    bool has_abnormality_model(XrayType type) const override;
    std::vector<double> abnormality_probabilities(XrayType type, const Image& image) const override;
    Heatmap explain(XrayType type, const Image& image, Condition condition) const override;

    const Network& stage1() const { return stage1_; }
    const Network& stage2() const { return stage2_; }
    const Network& abnormality_model(XrayType type) const;

private:
    Network stage1_;
    Network stage2_;
    std::map<XrayType, Network> abnormality_;
};

CascadeReport run_cascade(const Image& image, const CascadeBackend& backend, const CascadeConfig& config);

}  // namespace xdx
