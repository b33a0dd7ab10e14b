#include "dub3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dub3d/error.hpp"

namespace dub3d {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[6] = {'D', 'U', 'B', '3', 'D', '\0'};
constexpr std::uint64_t kAlign = 64;

std::uint64_t align_up(std::uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.tensor;
    }
    return nullptr;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const std::vector<NamedTensor>& tensors) {
    std::unordered_set<std::string> names;
    nlohmann::json dir = nlohmann::json::array();
    std::vector<std::uint64_t> offsets;
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        if (!names.insert(t.name).second) throw std::invalid_argument("save_checkpoint: duplicate tensor name " + t.name);
        offsets.push_back(offset);
        dir.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
        offset = align_up(offset + static_cast<std::uint64_t>(t.tensor.numel()) * sizeof(float));
    }
    nlohmann::json j;
    j["variant"] = header.variant;
    j["config_hash"] = header.config_hash;
    j["step"] = header.step;
    j["config"] = header.config;
    j["tensors"] = std::move(dir);
    const std::string line = j.dump() + "\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    const std::uint64_t data_start = align_up(sizeof(kMagic) + line.size());
    std::uint64_t pos = sizeof(kMagic) + line.size();
    static const char zeros[kAlign] = {};
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const std::uint64_t target = data_start + offsets[i];
        out.write(zeros, static_cast<std::streamsize>(target - pos));
        pos = target;
        const auto data = tensors[i].tensor.data();
        std::vector<float> buf(data.begin(), data.end());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        pos += buf.size() * sizeof(float);
    }
    if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint " + path.string() + ": bad magic");
    }
    const auto eol = bytes.find('\n', sizeof(kMagic));
    if (eol == std::string::npos) throw DataError("checkpoint " + path.string() + ": unterminated header");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin() + sizeof(kMagic), bytes.begin() + static_cast<std::ptrdiff_t>(eol));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": corrupt header: " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.header.variant = j.at("variant").get<std::string>();
        ckpt.header.config_hash = j.at("config_hash").get<std::string>();
        ckpt.header.step = j.at("step").get<std::int64_t>();
        ckpt.header.config = j.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": corrupt header: " + e.what());
    }
    const std::uint64_t data_start = align_up(eol + 1);
    const auto& dir = j.contains("tensors") ? j["tensors"] : nlohmann::json::array();
    if (!dir.is_array()) throw DataError("checkpoint " + path.string() + ": corrupt header: tensors is not an array");
    for (const auto& entry : dir) {
        std::string name = entry.value("name", std::string("<unnamed>"));
        Shape shape;
        std::uint64_t offset = 0;
        try {
            shape = entry.at("shape").get<Shape>();
            offset = entry.at("offset").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("checkpoint " + path.string() + ": corrupt entry for tensor " + name);
        }
        std::int64_t n = 0;
        try {
            n = shape_numel(shape);
        } catch (const std::exception&) {
            throw DataError("checkpoint " + path.string() + ": invalid shape for tensor " + name);
        }
        const std::uint64_t begin = data_start + offset;
        const std::uint64_t end = begin + static_cast<std::uint64_t>(n) * sizeof(float);
        if (offset % kAlign != 0 || end > bytes.size()) {
            throw DataError("checkpoint " + path.string() + ": payload out of bounds for tensor " + name);
        }
        std::vector<float> buf(static_cast<std::size_t>(n));
        std::memcpy(buf.data(), bytes.data() + begin, buf.size() * sizeof(float));
        ckpt.tensors.push_back({name, Tensor::from_data(shape, std::vector<double>(buf.begin(), buf.end()))});
    }
    return ckpt;
}

std::vector<NamedTensor> named_tensors(const std::vector<Param>& params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.value});
    return out;
}

void load_checkpoint_into(const Checkpoint& ckpt, std::vector<Param>& params, const std::string& expected_variant) {
    if (ckpt.header.variant != expected_variant) {
        throw DataError("checkpoint variant '" + ckpt.header.variant + "' does not match requested variant '" +
                        expected_variant + "'");
    }
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& t : ckpt.tensors) by_name[t.name] = &t.tensor;
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + p.name);
        if (it->second->shape() != p.value.shape()) {
            throw DataError("checkpoint tensor " + p.name + " has shape " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(p.value.shape()));
        }
        const auto src = it->second->data();
        auto dst = p.value.data_mut();
        std::copy(src.begin(), src.end(), dst.begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) throw DataError("checkpoint has unexpected tensor " + by_name.begin()->first);
}

}  // namespace dub3d
