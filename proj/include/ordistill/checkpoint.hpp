#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ordistill/backbone.hpp"

// Checkpoint file layout:
//   "ODCK" | u32 version | u64 header length | JSON header | tensor blobs
// The header carries the backbone config, training metadata and a manifest
// {name, offset, size} locating each blob relative to the end of the header.
namespace ordistill {

struct CheckpointInfo {
    int model_index = 1;
    int epoch = 0;
    std::string rng_state;
    nlohmann::json metrics = nlohmann::json::object();
};

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    CheckpointInfo info;
};

nlohmann::json backbone_to_json(const BackboneConfig& config);
BackboneConfig backbone_from_json(const nlohmann::json& j);

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const CheckpointInfo& info);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const CheckpointInfo& info);

/// Throws ErrorKind::Io when the file cannot be read and ErrorKind::Corrupt
/// (naming the file) when its contents are malformed.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes);

}  // namespace ordistill
