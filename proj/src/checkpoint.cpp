#include "ordistill/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ordistill/serialize.hpp"

namespace ordistill {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

nlohmann::json backbone_to_json(const BackboneConfig& c) {
    return {{"stage_channels", c.stage_channels},
            {"blocks_per_stage", c.blocks_per_stage},
            {"input_size", {c.input_height, c.input_width}},
            {"num_classes", c.num_classes},
            {"seed", c.seed}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
    const auto size = j.at("input_size").get<std::vector<std::size_t>>();
    if (size.size() != 2) fail(ErrorKind::Config, "input_size must be [height, width]");
    c.input_height = size[0];
    c.input_width = size[1];
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const CheckpointInfo& info) {
    std::string blobs;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, tensor] : model.parameters()) {
        std::string blob = encode_tensor(tensor);
        manifest.push_back({{"name", name}, {"offset", blobs.size()}, {"size", blob.size()}});
        blobs += blob;
    }
    const nlohmann::json header = {{"format", "ordistill-checkpoint"},
                                   {"config", backbone_to_json(model.config())},
                                   {"model_index", info.model_index},
                                   {"epoch", info.epoch},
                                   {"rng_state", info.rng_state},
                                   {"precision", dtype_name(dtype_of<T>())},
                                   {"metrics", info.metrics},
                                   {"tensors", manifest}};
    const std::string text = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    const std::uint32_t version = kVersion;
    const std::uint64_t header_len = text.size();
    out.append(reinterpret_cast<const char*>(&version), sizeof(version));
    out.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out += text;
    out += blobs;
    return out;
}

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes) {
    constexpr std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        fail(ErrorKind::Corrupt, "not a checkpoint (bad magic)");
    }
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    std::memcpy(&version, bytes.data() + 4, sizeof(version));
    std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
    if (version != kVersion) fail(ErrorKind::Corrupt, "unsupported checkpoint version " + std::to_string(version));
    if (header_len > bytes.size() - prefix) fail(ErrorKind::Corrupt, "checkpoint header truncated");

    try {
        const auto header = nlohmann::json::parse(bytes.begin() + prefix,
                                                  bytes.begin() + prefix + static_cast<std::ptrdiff_t>(header_len));
        const std::size_t blob_base = prefix + header_len;
        std::vector<typename Model<T>::Parameter> params;
        for (const auto& entry : header.at("tensors")) {
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto size = entry.at("size").get<std::size_t>();
            if (offset > bytes.size() - blob_base || size > bytes.size() - blob_base - offset) {
                fail(ErrorKind::Corrupt, "tensor blob outside checkpoint");
            }
            params.emplace_back(entry.at("name").get<std::string>(),
                                decode_tensor<T>(bytes.substr(blob_base + offset, size)));
        }
        CheckpointInfo info;
        info.model_index = header.at("model_index").get<int>();
        info.epoch = header.at("epoch").get<int>();
        info.rng_state = header.at("rng_state").get<std::string>();
        info.metrics = header.at("metrics");
        return {Model<T>::from_parameters(backbone_from_json(header.at("config")), std::move(params)),
                std::move(info)};
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Corrupt, std::string("malformed checkpoint header: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Corrupt) throw;
        fail(ErrorKind::Corrupt, std::string("invalid checkpoint: ") + e.what());
    }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const CheckpointInfo& info) {
    const std::string bytes = encode_checkpoint(model, info);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return decode_checkpoint<T>(std::move(buf).str());
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

#define ORDISTILL_INSTANTIATE(T)                                                           \
    template std::string encode_checkpoint<T>(const Model<T>&, const CheckpointInfo&);     \
    template void save_checkpoint<T>(const std::filesystem::path&, const Model<T>&,       \
                                     const CheckpointInfo&);                               \
    template LoadedCheckpoint<T> load_checkpoint<T>(const std::filesystem::path&);         \
    template LoadedCheckpoint<T> decode_checkpoint<T>(const std::string&);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
