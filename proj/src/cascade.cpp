#include "xdx/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace xdx {

void CascadeConfig::validate() const {
    if (!(stage1_threshold > 0 && stage1_threshold < 1))
        throw std::invalid_argument("stage1_threshold must lie in (0,1)");
    if (!(stage3_threshold > 0 && stage3_threshold < 1))
        throw std::invalid_argument("stage3_threshold must lie in (0,1)");
}

void parse_explain(const std::string& text, CascadeConfig& config) {
    config.explain_classes.clear();
    if (text.empty() || text == "none") {
        config.explain = ExplainMode::none;
        return;
    }
    if (text == "positives") {
        config.explain = ExplainMode::positives;
        return;
    }
    if (text == "all") {
        config.explain = ExplainMode::all;
        return;
    }
    std::istringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        const auto first = item.find_first_not_of(" \t"), last = item.find_last_not_of(" \t");
        item = first == std::string::npos ? std::string() : item.substr(first, last - first + 1);
        auto c = parse_condition(item);
        if (!c) throw std::invalid_argument("unknown condition '" + item + "' in explain list");
        if (std::find(config.explain_classes.begin(), config.explain_classes.end(), *c) == config.explain_classes.end())
            config.explain_classes.push_back(*c);
    }
    if (config.explain_classes.empty()) throw std::invalid_argument("empty explain list");
    config.explain = ExplainMode::classes;
}

nlohmann::json report_to_json(const CascadeReport& report) {
    nlohmann::json j;
    j["stage1"] = {{"is_xray", report.stage1.is_xray}, {"p_xray", report.stage1.p_xray}};
    if (report.stage2) {
        nlohmann::json probs = nlohmann::json::object();
        for (std::size_t i = 0; i < report.stage2->probs.size(); ++i)
            probs[xray_type_names()[i]] = report.stage2->probs[i];
        j["stage2"] = {{"type", std::string(name_of(report.stage2->type))}, {"probs", probs}};
    } else {
        j["stage2"] = nullptr;
    }
    if (report.stage3) {
        nlohmann::json probs = nlohmann::json::object();
        for (std::size_t i = 0; i < report.stage3->probs.size(); ++i)
            probs[condition_names()[i]] = report.stage3->probs[i];
        nlohmann::json positive = nlohmann::json::array();
        for (auto c : report.stage3->positive) positive.push_back(std::string(name_of(c)));
        j["stage3"] = {{"probs", probs}, {"positive", positive}};
    } else {
        j["stage3"] = nullptr;
    }
    if (report.explanations) {
        nlohmann::json maps = nlohmann::json::object();
        for (const auto& [name, heatmap] : *report.explanations) maps[name] = heatmap_to_json(heatmap);
        j["explanations"] = maps;
    } else {
        j["explanations"] = nullptr;
    }
    j["notes"] = report.notes;
    return j;
}

std::string check_report(const CascadeReport& report, const CascadeConfig& config) {
    const auto& s1 = report.stage1;
    if (!(s1.p_xray >= 0 && s1.p_xray <= 1)) return "p_xray outside [0,1]";
    if (s1.is_xray != (s1.p_xray >= config.stage1_threshold)) return "is_xray disagrees with the stage-1 threshold";
    if (report.stage2.has_value() != s1.is_xray) return "stage2 presence differs from stage1.is_xray";
    if (report.stage2) {
        const auto& p = report.stage2->probs;
        if (p.size() != kXrayTypeCount) return "stage2 must carry one probability per type";
        double total = 0;
        for (double v : p) {
            if (!(v >= 0 && v <= 1)) return "stage2 probability outside [0,1]";
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-6) return "stage2 probabilities do not sum to 1";
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        if (static_cast<std::size_t>(report.stage2->type) != best) return "stage2 type is not the argmax";
    }
    const bool chest = report.stage2 && report.stage2->type == XrayType::Chest;
    if (report.stage3.has_value() != chest) return "stage3 presence differs from stage2.type == Chest";
    if (report.stage3) {
        const auto& p = report.stage3->probs;
        if (p.size() != kConditionCount) return "stage3 must carry one probability per condition";
        std::vector<Condition> expected;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!(p[i] >= 0 && p[i] <= 1)) return "stage3 probability outside [0,1]";
            if (p[i] >= config.stage3_threshold) expected.push_back(static_cast<Condition>(i));
        }
        if (expected != report.stage3->positive) return "stage3 positive set differs from the threshold rule";
    }
    if (report.explanations && !report.stage3) return "explanations without stage3";
    if (report.explanations)
        for (const auto& [name, h] : *report.explanations) {
            if (h.values.size() != h.width * h.height) return "heatmap " + name + " has inconsistent dimensions";
            for (double v : h.values)
                if (!(v >= 0 && v <= 1)) return "heatmap " + name + " value outside [0,1]";
        }
    return {};
}

CascadeReport run_cascade(const Image& image, const CascadeBackend& backend, const CascadeConfig& config) {
    config.validate();
    CascadeReport report;
    report.stage1.p_xray = backend.xray_probability(image);
    report.stage1.is_xray = report.stage1.p_xray >= config.stage1_threshold;
    if (!report.stage1.is_xray) {
        report.notes.emplace_back(kNoteNotXray);
        return report;
    }

    Stage2Result s2;
    s2.probs = backend.type_probabilities(image);
    if (s2.probs.size() != kXrayTypeCount)
        throw std::runtime_error("stage-2 model returned " + std::to_string(s2.probs.size()) + " probabilities, expected " +
                                 std::to_string(kXrayTypeCount));
    s2.type = static_cast<XrayType>(std::max_element(s2.probs.begin(), s2.probs.end()) - s2.probs.begin());
    report.stage2 = s2;
    if (!backend.has_abnormality_model(s2.type)) {
        report.notes.emplace_back(kNoteNoAbnormalityModel);
        return report;
    }

    Stage3Result s3;
    s3.probs = backend.abnormality_probabilities(s2.type, image);
    if (s3.probs.size() != kConditionCount)
        throw std::runtime_error("abnormality model returned " + std::to_string(s3.probs.size()) +
                                 " probabilities, expected " + std::to_string(kConditionCount));
    for (std::size_t i = 0; i < s3.probs.size(); ++i)
        if (s3.probs[i] >= config.stage3_threshold) s3.positive.push_back(static_cast<Condition>(i));
    report.stage3 = s3;

    std::vector<Condition> targets;
    switch (config.explain) {
        case ExplainMode::none:
            return report;
        case ExplainMode::positives:
            targets = s3.positive;
            break;
        case ExplainMode::all:
            for (std::size_t i = 0; i < kConditionCount; ++i) targets.push_back(static_cast<Condition>(i));
            break;
        case ExplainMode::classes:
            targets = config.explain_classes;
            break;
    }
    report.explanations.emplace();
    for (auto c : targets) (*report.explanations)[std::string(name_of(c))] = backend.explain(s2.type, image, c);
    return report;
}

namespace {

std::vector<double> logits_of(const Network& net, const Image& image) {
    NoGradGuard no_grad;
    const Tensor logits = net.forward(preprocess(image, net.spec().input_size));
    return {logits.data().begin(), logits.data().end()};
}

void require_head(const Network& net, const HeadSpec& head, const char* role) {
    if (!(net.spec().head == head))
        throw std::invalid_argument(std::string(role) + " model must use head " + to_string(head) + ", got " +
                                    to_string(net.spec().head));
}

}  // namespace

NetworkBackend::NetworkBackend(Network stage1, Network stage2) : stage1_(std::move(stage1)), stage2_(std::move(stage2)) {
    require_head(stage1_, HeadSpec::binary(), "stage-1");
    require_head(stage2_, HeadSpec::softmax(kXrayTypeCount), "stage-2");
}

void NetworkBackend::register_abnormality_model(XrayType type, Network model) {
    require_head(model, HeadSpec::multilabel(kConditionCount), "abnormality");
    if (!abnormality_.emplace(type, std::move(model)).second)
        throw std::invalid_argument("abnormality model for " + std::string(name_of(type)) + " already registered");
}

double NetworkBackend::xray_probability(const Image& image) const {
    return stable_sigmoid(static_cast<real>(logits_of(stage1_, image).at(0)));
}

std::vector<double> NetworkBackend::type_probabilities(const Image& image) const {
    auto z = logits_of(stage2_, image);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0;
    for (auto& v : z) total += (v = std::exp(v - top));
    for (auto& v : z) v /= total;
    return z;
}

bool NetworkBackend::has_abnormality_model(XrayType type) const { return abnormality_.count(type) != 0; }

const Network& NetworkBackend::abnormality_model(XrayType type) const {
    auto it = abnormality_.find(type);
    if (it == abnormality_.end())
        throw std::out_of_range("no abnormality model for " + std::string(name_of(type)));
    return it->second;
}

std::vector<double> NetworkBackend::abnormality_probabilities(XrayType type, const Image& image) const {
    auto z = logits_of(abnormality_model(type), image);
    for (auto& v : z) v = stable_sigmoid(static_cast<real>(v));
    return z;
}

Heatmap NetworkBackend::explain(XrayType type, const Image& image, Condition condition) const {
    const Network& net = abnormality_model(type);
    GradCamOptions opts;
    opts.target_class = std::string(name_of(condition));
    return grad_cam(net, preprocess(image, net.spec().input_size), static_cast<std::size_t>(condition), opts);
}

}  // namespace xdx
