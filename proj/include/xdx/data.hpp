#pragma once

// Labels, manifests, deterministic splitting and stage-1 class balancing.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xdx {

/// Radiograph types, in the order used by the stage-2 softmax head.
enum class XrayType : std::uint8_t {
    Spine, Elbow, Finger, Forearm, Hand, Wrist, Knee, Foot, Ankle, Hip, Humerus, Shoulder, Dental, Chest
};
inline constexpr std::size_t kXrayTypeCount = 14;

/// Chest conditions, in the order used by the stage-3 multilabel head and by AUC tables.
enum class Condition : std::uint8_t {
    Atelectasis, Cardiomegaly, Effusion, Infiltration, Mass, Nodule, Pneumonia, Pneumothorax,
    Consolidation, Edema, Emphysema, Fibrosis, PleuralThickening, Hernia
};
inline constexpr std::size_t kConditionCount = 14;

const std::array<std::string, kXrayTypeCount>& xray_type_names();
const std::array<std::string, kConditionCount>& condition_names();

std::string_view name_of(XrayType type);
std::string_view name_of(Condition condition);
/// Case-insensitive; spaces and underscores are interchangeable.
std::optional<XrayType> parse_xray_type(std::string_view text);
std::optional<Condition> parse_condition(std::string_view text);

enum class Stage1Label : std::uint8_t { xray, other };
enum class Split : std::uint8_t { train, val, test };

std::string_view name_of(Split split);
std::optional<Split> parse_split(std::string_view text);

struct SampleRecord {
    std::string path;
    Stage1Label stage1 = Stage1Label::other;
    std::optional<XrayType> stage2;
    /// Present only for chest radiographs; an empty list means "no finding".
    std::optional<std::vector<Condition>> stage3;
    std::optional<Split> split;

    /// Throws std::invalid_argument naming the violated rule.
    void validate() const;
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::string provenance;

    std::size_t size() const { return records.size(); }
    std::vector<SampleRecord> in_split(Split split) const;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// JSON Lines: {"path":..., "stage1":"xray"|"other", "stage2":type?, "stage3":[conditions]?, "split":...?}.
/// Blank lines are skipped; errors carry the 1-based line number.
Manifest parse_manifest(std::string_view text);
Manifest load_manifest(const std::string& path);
std::string format_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::string& path);

struct SplitRatios {
    double train = 0.7;
    double val = 0.2;
    double test = 0.1;
};

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

/// floor(train*n), floor(val*n), remainder.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

/// Shuffles indices with Fisher-Yates driven by splitmix64(seed), then
/// apportions each stage-2 class (records without one form a single extra
/// stratum) so that every class/split cell is the floor or ceiling of
/// n_class * n_split / n while the global counts match split_counts exactly.
Manifest split_dataset(const Manifest& manifest, std::uint64_t seed, const SplitRatios& ratios = {});

/// Keeps floor(chest_fraction * |chest|) seeded-random chest radiographs plus
/// every other radiograph, then samples the same number of non-radiographs.
Manifest balance_stage1(const std::vector<SampleRecord>& xray_records, const std::vector<SampleRecord>& other_records,
                        double chest_fraction, std::uint64_t seed);

}  // namespace xdx
