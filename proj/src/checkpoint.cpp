#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "eigmeta/errors.hpp"
#include "eigmeta/train.hpp"

namespace eigmeta::train {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'E', 'I', 'G', 'M', 'E', 'T', 'A', '\0'};

template <typename T>
void append_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::string_view bytes, std::size_t offset) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double null_to_nan(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& cp) {
    json manifest;
    manifest["format"] = "eigmeta-checkpoint";
    manifest["version"] = cp.version;
    manifest["architecture"] = {{"input_dim", cp.params.arch.input_dim},
                                {"hidden", cp.params.arch.hidden},
                                {"embed_dim", cp.params.arch.embed_dim},
                                {"projected_dim", cp.params.arch.projected_dim}};
    manifest["config"] = cp.config.to_json();
    manifest["rng_state"] = cp.rng_state;
    manifest["best_validation_auc"] = nan_to_null(cp.best_validation_auc);
    manifest["best_update"] = cp.best_update;
    manifest["updates"] = cp.updates;
    manifest["skipped_episodes"] = cp.skipped_episodes;

    json arrays = json::array();
    std::size_t offset = 0;
    const auto named = cp.params.named_arrays();
    for (const auto& [name, m] : named) {
        arrays.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
        offset += m->size();
    }
    manifest["arrays"] = std::move(arrays);
    manifest["payload_doubles"] = offset;

    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof(kMagic));
    append_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset * sizeof(double));
    for (const auto& [name, m] : named)
        for (double v : m->values()) append_le<double>(out, v);
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorKind::Parse, "not an eigmeta checkpoint");
    }
    const auto length = read_le<std::uint64_t>(bytes, 8);
    if (16 + length > bytes.size()) throw Error(ErrorKind::Parse, "truncated checkpoint manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.substr(16, length));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("checkpoint manifest: ") + e.what());
    }
    const int version = manifest.value("version", -1);
    if (version != Checkpoint::kVersion) {
        throw Error(ErrorKind::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                    ", this build reads version " +
                                                    std::to_string(Checkpoint::kVersion));
    }

    Checkpoint cp;
    cp.version = version;
    cp.config.apply_json(manifest.at("config"));
    const json& a = manifest.at("architecture");
    model::Architecture arch{a.at("input_dim").get<std::size_t>(), a.at("hidden").get<std::size_t>(),
                             a.at("embed_dim").get<std::size_t>(), a.at("projected_dim").get<std::size_t>()};
    std::mt19937_64 scratch(0);
    cp.params = model::ModelParams::initialize(arch, scratch);
    cp.rng_state = manifest.at("rng_state").get<std::string>();
    cp.best_validation_auc = null_to_nan(manifest.at("best_validation_auc"));
    cp.best_update = manifest.at("best_update").get<std::size_t>();
    cp.updates = manifest.at("updates").get<std::size_t>();
    cp.skipped_episodes = manifest.at("skipped_episodes").get<std::size_t>();

    const std::size_t payload_start = 16 + length;
    const std::size_t payload_doubles = manifest.at("payload_doubles").get<std::size_t>();
    if (bytes.size() != payload_start + payload_doubles * sizeof(double)) {
        throw Error(ErrorKind::Parse, "checkpoint payload size does not match its manifest");
    }
    auto named = cp.params.named_arrays();
    const json& arrays = manifest.at("arrays");
    if (arrays.size() != named.size()) throw Error(ErrorKind::Parse, "checkpoint array count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
        const json& entry = arrays[i];
        Matrix* m = named[i].second;
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (entry.at("name").get<std::string>() != named[i].first || shape.size() != 2 ||
            shape[0] != m->rows() || shape[1] != m->cols()) {
            throw Error(ErrorKind::Parse, "checkpoint array '" + named[i].first + "' does not match the architecture");
        }
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        if (offset + m->size() > payload_doubles) throw Error(ErrorKind::Parse, "array offset out of range");
        for (std::size_t k = 0; k < m->size(); ++k) {
            (*m)[k] = read_le<double>(bytes, payload_start + (offset + k) * sizeof(double));
        }
    }
    return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace eigmeta::train
