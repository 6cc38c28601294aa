#include "xdx/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xdx/rng.hpp"

namespace xdx {

using nlohmann::json;

const std::array<std::string, kXrayTypeCount>& xray_type_names() {
    static const std::array<std::string, kXrayTypeCount> names{
        "Spine", "Elbow", "Finger", "Forearm", "Hand", "Wrist", "Knee",
        "Foot", "Ankle", "Hip", "Humerus", "Shoulder", "Dental", "Chest"};
    return names;
}

const std::array<std::string, kConditionCount>& condition_names() {
    static const std::array<std::string, kConditionCount> names{
        "Atelectasis", "Cardiomegaly", "Effusion", "Infiltration", "Mass", "Nodule", "Pneumonia",
        "Pneumothorax", "Consolidation", "Edema", "Emphysema", "Fibrosis", "Pleural Thickening", "Hernia"};
    return names;
}

std::string_view name_of(XrayType type) { return xray_type_names()[static_cast<std::size_t>(type)]; }
std::string_view name_of(Condition condition) { return condition_names()[static_cast<std::size_t>(condition)]; }

namespace {

std::string fold(std::string_view text) {
    std::string out;
    for (char c : text) out.push_back(c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

template <std::size_t N>
std::optional<std::size_t> lookup(const std::array<std::string, N>& names, std::string_view text) {
    const std::string key = fold(text);
    for (std::size_t i = 0; i < N; ++i)
        if (fold(names[i]) == key) return i;
    return std::nullopt;
}

}  // namespace

std::optional<XrayType> parse_xray_type(std::string_view text) {
    if (auto i = lookup(xray_type_names(), text)) return static_cast<XrayType>(*i);
    return std::nullopt;
}

std::optional<Condition> parse_condition(std::string_view text) {
    if (auto i = lookup(condition_names(), text)) return static_cast<Condition>(*i);
    return std::nullopt;
}

std::string_view name_of(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

std::optional<Split> parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    return std::nullopt;
}

void SampleRecord::validate() const {
    if (path.empty()) throw std::invalid_argument("record has an empty path");
    if (stage2 && stage1 != Stage1Label::xray)
        throw std::invalid_argument("record " + path + ": stage2 label requires stage1 = xray");
    if (stage3 && stage2 != XrayType::Chest)
        throw std::invalid_argument("record " + path + ": stage3 labels require stage2 = chest");
}

std::vector<SampleRecord> Manifest::in_split(Split split) const {
    std::vector<SampleRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [split](const SampleRecord& r) { return r.split == split; });
    return out;
}

// ---------------------------------------------------------------------------
// JSON Lines

namespace {

SampleRecord parse_record(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
    SampleRecord r;
    if (!j.contains("path") || !j["path"].is_string()) throw std::invalid_argument("missing string field 'path'");
    r.path = j["path"].get<std::string>();
    if (!j.contains("stage1") || !j["stage1"].is_string()) throw std::invalid_argument("missing string field 'stage1'");
    const auto s1 = j["stage1"].get<std::string>();
    if (s1 == "xray")
        r.stage1 = Stage1Label::xray;
    else if (s1 == "other")
        r.stage1 = Stage1Label::other;
    else
        throw std::invalid_argument("unknown stage1 label '" + s1 + "'");
    if (j.contains("stage2") && !j["stage2"].is_null()) {
        const auto s2 = j["stage2"].get<std::string>();
        r.stage2 = parse_xray_type(s2);
        if (!r.stage2) throw std::invalid_argument("unknown stage2 label '" + s2 + "'");
    }
    if (j.contains("stage3") && !j["stage3"].is_null()) {
        if (!j["stage3"].is_array()) throw std::invalid_argument("'stage3' must be an array");
        std::vector<Condition> conditions;
        for (const auto& item : j["stage3"]) {
            const auto name = item.get<std::string>();
            auto c = parse_condition(name);
            if (!c) throw std::invalid_argument("unknown stage3 label '" + name + "'");
            if (std::find(conditions.begin(), conditions.end(), *c) == conditions.end()) conditions.push_back(*c);
        }
        std::sort(conditions.begin(), conditions.end());
        r.stage3 = std::move(conditions);
    }
    if (j.contains("split") && !j["split"].is_null()) {
        const auto s = j["split"].get<std::string>();
        r.split = parse_split(s);
        if (!r.split) throw std::invalid_argument("unknown split '" + s + "'");
    }
    r.validate();
    return r;
}

std::string lower(std::string_view text) {
    std::string out(text);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

Manifest parse_manifest(std::string_view text) {
    Manifest manifest;
    std::set<std::string> paths;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        try {
            const json j = json::parse(line);
            if (j.is_object() && j.contains("provenance") && !j.contains("path")) {
                manifest.provenance = j["provenance"].get<std::string>();
                continue;
            }
            SampleRecord r = parse_record(j);
            if (!paths.insert(r.path).second) throw std::invalid_argument("duplicate path " + r.path);
            manifest.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw ManifestError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return manifest;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw ManifestError("cannot open manifest " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    return parse_manifest(buffer.str());
}

std::string format_manifest(const Manifest& manifest) {
    std::string out;
    if (!manifest.provenance.empty()) out += json{{"provenance", manifest.provenance}}.dump() + "\n";
    for (const auto& r : manifest.records) {
        json j;
        j["path"] = r.path;
        j["stage1"] = r.stage1 == Stage1Label::xray ? "xray" : "other";
        if (r.stage2) j["stage2"] = lower(name_of(*r.stage2));
        if (r.stage3) {
            json arr = json::array();
            for (auto c : *r.stage3) arr.push_back(std::string(name_of(c)));
            j["stage3"] = arr;
        }
        if (r.split) j["split"] = std::string(name_of(*r.split));
        out += j.dump() + "\n";
    }
    return out;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw ManifestError("cannot write manifest " + path);
    file << format_manifest(manifest);
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

std::size_t floor_count(double ratio, std::size_t n) {
    // The epsilon absorbs representation error such as 0.7 * 20 = 14.000000000000002
    // on one side and 0.29 * 100 = 28.999999999999996 on the other.
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

// Max-flow over source -> stratum -> split -> sink with unit stratum/split edges.
// Returns, per stratum, which splits receive one extra record.
std::vector<std::array<bool, 3>> distribute_remainders(const std::vector<std::size_t>& row_need,
                                                       const std::array<std::size_t, 3>& col_need,
                                                       const std::vector<std::array<bool, 3>>& allowed) {
    const std::size_t rows = row_need.size();
    const std::size_t source = rows + 3, sink = rows + 4, nodes = rows + 5;
    std::vector<std::vector<long>> cap(nodes, std::vector<long>(nodes, 0));
    for (std::size_t r = 0; r < rows; ++r) {
        cap[source][r] = static_cast<long>(row_need[r]);
        for (std::size_t s = 0; s < 3; ++s)
            if (allowed[r][s]) cap[r][rows + s] = 1;
    }
    for (std::size_t s = 0; s < 3; ++s) cap[rows + s][sink] = static_cast<long>(col_need[s]);

    for (;;) {
        std::vector<long> parent(nodes, -1);
        parent[source] = static_cast<long>(source);
        std::vector<std::size_t> queue{source};
        for (std::size_t head = 0; head < queue.size() && parent[sink] < 0; ++head) {
            const std::size_t u = queue[head];
            for (std::size_t v = 0; v < nodes; ++v)
                if (parent[v] < 0 && cap[u][v] > 0) {
                    parent[v] = static_cast<long>(u);
                    queue.push_back(v);
                }
        }
        if (parent[sink] < 0) break;
        for (std::size_t v = sink; v != source; v = static_cast<std::size_t>(parent[v])) {
            const auto u = static_cast<std::size_t>(parent[v]);
            cap[u][v] -= 1;
            cap[v][u] += 1;
        }
    }

    std::vector<std::array<bool, 3>> extra(rows, {false, false, false});
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t got = 0;
        for (std::size_t s = 0; s < 3; ++s)
            if (allowed[r][s] && cap[r][rows + s] == 0) {
                extra[r][s] = true;
                ++got;
            }
        if (got != row_need[r]) throw std::logic_error("stratified split: remainder apportioning failed");
    }
    return extra;
}

}  // namespace

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
    SplitCounts c;
    c.train = floor_count(ratios.train, n);
    c.val = floor_count(ratios.val, n);
    c.test = n - c.train - c.val;
    return c;
}

Manifest split_dataset(const Manifest& manifest, std::uint64_t seed, const SplitRatios& ratios) {
    const std::size_t n = manifest.size();
    if (n == 0) throw std::invalid_argument("split_dataset: empty manifest");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw std::invalid_argument("split_dataset: ratios must be nonnegative and sum to 1");

    const SplitCounts counts = split_counts(n, ratios);
    const std::array<std::size_t, 3> totals{counts.train, counts.val, counts.test};

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 rng(seed);
    shuffle(order, rng);

    // Stratum key: stage-2 class index, or kXrayTypeCount for unlabeled records.
    std::vector<std::vector<std::size_t>> strata(kXrayTypeCount + 1);
    for (std::size_t idx : order) {
        const auto& r = manifest.records[idx];
        strata[r.stage2 ? static_cast<std::size_t>(*r.stage2) : kXrayTypeCount].push_back(idx);
    }
    std::erase_if(strata, [](const auto& s) { return s.empty(); });

    std::vector<std::array<std::size_t, 3>> cells(strata.size());
    std::vector<std::array<bool, 3>> fractional(strata.size());
    std::vector<std::size_t> row_need(strata.size());
    std::array<std::size_t, 3> col_need = totals;
    for (std::size_t c = 0; c < strata.size(); ++c) {
        const std::size_t nc = strata[c].size();
        std::size_t assigned = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            cells[c][s] = nc * totals[s] / n;
            fractional[c][s] = (nc * totals[s]) % n != 0;
            assigned += cells[c][s];
            col_need[s] -= cells[c][s];
        }
        row_need[c] = nc - assigned;
    }
    const auto extra = distribute_remainders(row_need, col_need, fractional);

    Manifest out = manifest;
    for (std::size_t c = 0; c < strata.size(); ++c) {
        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const std::size_t take = cells[c][s] + (extra[c][s] ? 1 : 0);
            for (std::size_t k = 0; k < take; ++k) out.records[strata[c][pos++]].split = static_cast<Split>(s);
        }
    }
    return out;
}

Manifest balance_stage1(const std::vector<SampleRecord>& xray_records, const std::vector<SampleRecord>& other_records,
                        double chest_fraction, std::uint64_t seed) {
    if (!(chest_fraction >= 0 && chest_fraction <= 1))
        throw std::invalid_argument("balance_stage1: chest_fraction must lie in [0,1]");
    std::vector<std::size_t> chest, keep;
    for (std::size_t i = 0; i < xray_records.size(); ++i) {
        if (xray_records[i].stage1 != Stage1Label::xray)
            throw std::invalid_argument("balance_stage1: " + xray_records[i].path + " is not labeled xray");
        (xray_records[i].stage2 == XrayType::Chest ? chest : keep).push_back(i);
    }
    for (const auto& r : other_records)
        if (r.stage1 != Stage1Label::other)
            throw std::invalid_argument("balance_stage1: " + r.path + " is not labeled other");

    SplitMix64 rng(seed);
    shuffle(chest, rng);
    chest.resize(floor_count(chest_fraction, chest.size()));
    keep.insert(keep.end(), chest.begin(), chest.end());
    std::sort(keep.begin(), keep.end());

    if (other_records.size() < keep.size())
        throw std::invalid_argument("balance_stage1: need " + std::to_string(keep.size()) + " other records, have " +
                                    std::to_string(other_records.size()));
    std::vector<std::size_t> others(other_records.size());
    for (std::size_t i = 0; i < others.size(); ++i) others[i] = i;
    shuffle(others, rng);
    others.resize(keep.size());
    std::sort(others.begin(), others.end());

    Manifest out;
    for (std::size_t i : keep) out.records.push_back(xray_records[i]);
    for (std::size_t i : others) out.records.push_back(other_records[i]);
    out.provenance = "balance_stage1 chest_fraction=" + std::to_string(chest_fraction) + " seed=" + std::to_string(seed);
    return out;
}

}  // namespace xdx
