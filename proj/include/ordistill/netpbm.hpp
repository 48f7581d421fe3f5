#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ordistill::netpbm {

/// 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const Raster&) const = default;
};

/// Binary P6 (channels = 3) or P5 (channels = 1), maxval 255.
std::string encode(const Raster& image);
/// Accepts P5/P6 with maxval 255, '#' comments and arbitrary header whitespace.
/// Throws ErrorKind::Format on anything else.
Raster decode(std::string_view bytes);

Raster read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Raster& image);

/// Writes raw bytes, throwing ErrorKind::Io on failure.
void write_bytes(const std::filesystem::path& path, std::string_view bytes);
std::string read_bytes(const std::filesystem::path& path);

}  // namespace ordistill::netpbm
