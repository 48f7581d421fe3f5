#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ordistill/backbone.hpp"

namespace ordistill {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

/// SHA-256 over every parameter name, shape and raw element bytes, in order.
template <typename T>
std::string parameter_hash(const Model<T>& model);

}  // namespace ordistill
