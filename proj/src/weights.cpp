#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "xdx/model.hpp"

namespace xdx {

namespace {

static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

constexpr char kMagic[4] = {'X', 'D', 'X', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto view = bytes_.subspan(pos_, n);
        pos_ += n;
        return view;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n)
            throw WeightFormatError(std::string("weight file truncated while reading ") + what + " at byte " +
                                    std::to_string(pos_));
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<NamedArray>& arrays) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.name.size() > 0xFFFF) throw WeightFormatError("tensor name too long: " + a.name.substr(0, 64));
        if (a.shape.size() > 0xFF) throw WeightFormatError("too many dimensions in " + a.name);
        if (numel(a.shape) != a.values.size())
            throw WeightFormatError("tensor " + a.name + " has " + std::to_string(a.values.size()) +
                                    " values for shape " + to_string(a.shape));
        put<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
        out.insert(out.end(), a.name.begin(), a.name.end());
        put<std::uint8_t>(out, static_cast<std::uint8_t>(a.shape.size()));
        for (std::size_t d : a.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        const auto* raw = reinterpret_cast<const std::uint8_t*>(a.values.data());
        out.insert(out.end(), raw, raw + a.values.size() * sizeof(float));
    }
    return out;
}

std::vector<NamedArray> decode_weights(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    auto magic = in.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw WeightFormatError("not a weight file (bad magic)");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kVersion)
        throw WeightFormatError("unsupported weight file version " + std::to_string(version) + " (expected 1)");
    const auto count = in.get<std::uint32_t>("tensor count");
    std::vector<NamedArray> arrays;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        const auto name_len = in.get<std::uint16_t>("name length");
        auto name = in.take(name_len, "name");
        a.name.assign(name.begin(), name.end());
        if (!seen.insert(a.name).second) throw WeightFormatError("duplicate tensor name " + a.name);
        const auto ndim = in.get<std::uint8_t>("rank");
        for (std::uint8_t d = 0; d < ndim; ++d) a.shape.push_back(in.get<std::uint32_t>("dims"));
        const std::size_t n = numel(a.shape);
        if (n > (bytes.size() - in.position()) / sizeof(float))
            throw WeightFormatError("weight file truncated in data of " + a.name);
        auto raw = in.take(n * sizeof(float), "data");
        a.values.resize(n);
        std::memcpy(a.values.data(), raw.data(), raw.size());
        arrays.push_back(std::move(a));
    }
    if (!in.done()) throw WeightFormatError("trailing bytes after last tensor");
    return arrays;
}

std::vector<NamedArray> read_weight_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw WeightFormatError("cannot open weight file " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    return decode_weights(bytes);
}

void write_weight_file(const std::string& path, const std::vector<NamedArray>& arrays) {
    const auto bytes = encode_weights(arrays);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
        if (!file) throw std::runtime_error("cannot write weight file " + path);
        file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!file) throw std::runtime_error("failed writing weight file " + path);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> export_weights(const Network& net) {
    std::vector<NamedArray> arrays;
    for (const auto& [name, t] : net.named_tensors()) {
        NamedArray a{name, t.shape(), {}};
        a.values.reserve(t.numel());
        for (real v : t.data()) a.values.push_back(static_cast<float>(v));
        arrays.push_back(std::move(a));
    }
    return arrays;
}

void save_weights(const Network& net, const std::string& path) { write_weight_file(path, export_weights(net)); }

LoadReport apply_weights(Network& net, const std::vector<NamedArray>& arrays, LoadMode mode) {
    std::map<std::string, Tensor> targets;
    for (const auto& [name, t] : net.named_tensors()) targets.emplace(name, t);

    // Validate everything before touching the network.
    LoadReport report;
    std::vector<std::pair<Tensor, const NamedArray*>> plan;
    for (const auto& a : arrays) {
        auto it = targets.find(a.name);
        if (it == targets.end()) {
            if (mode == LoadMode::strict) throw WeightFormatError("unknown tensor name " + a.name);
            report.skipped.push_back(a.name);
            continue;
        }
        if (it->second.shape() != a.shape)
            throw WeightFormatError("shape mismatch for " + a.name + ": file " + to_string(a.shape) + ", network " +
                                    to_string(it->second.shape()));
        plan.emplace_back(it->second, &a);
        report.loaded.push_back(a.name);
    }
    if (mode == LoadMode::strict && plan.size() != targets.size()) {
        std::set<std::string> present(report.loaded.begin(), report.loaded.end());
        for (const auto& [name, t] : targets)
            if (!present.count(name)) throw WeightFormatError("weight file is missing tensor " + name);
    }
    for (auto& [tensor, array] : plan) {
        auto dst = tensor.mutable_data();
        std::transform(array->values.begin(), array->values.end(), dst.begin(),
                       [](float v) { return static_cast<real>(v); });
    }
    return report;
}

LoadReport load_weights(Network& net, const std::string& path, LoadMode mode) {
    return apply_weights(net, read_weight_file(path), mode);
}

NetworkSpec infer_spec(const std::vector<NamedArray>& arrays, std::size_t input_size) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    auto find = [&](const std::string& name) -> const NamedArray& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw WeightFormatError("cannot infer architecture: missing " + name);
        return *it->second;
    };

    NetworkSpec spec;
    spec.input_size = input_size;
    spec.init_channels = find("features.conv0.weight").shape.at(0);
    spec.growth_rate = find("features.denseblock1.denselayer1.conv.weight").shape.at(0);
    static const std::regex layer(R"(features\.denseblock(\d+)\.denselayer(\d+)\.conv\.weight)");
    std::map<std::size_t, std::size_t> layers_per_block;
    for (const auto& a : arrays) {
        std::smatch m;
        if (std::regex_match(a.name, m, layer)) {
            auto& count = layers_per_block[std::stoul(m[1].str())];
            count = std::max<std::size_t>(count, std::stoul(m[2].str()));
        }
    }
    spec.block_sizes.clear();
    for (std::size_t b = 1; layers_per_block.count(b); ++b) spec.block_sizes.push_back(layers_per_block[b]);
    if (spec.block_sizes.size() != layers_per_block.size())
        throw WeightFormatError("cannot infer architecture: dense blocks are not numbered contiguously");

    const std::size_t outputs = find("classifier.weight").shape.at(0);
    spec.head = outputs == 1 ? HeadSpec::binary() : HeadSpec::softmax(outputs);
    return spec;
}

std::string weight_checksum(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw WeightFormatError("cannot open weight file " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char c;
    while (file.get(c)) {
        hash ^= static_cast<std::uint8_t>(c);
        hash *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

}  // namespace xdx
