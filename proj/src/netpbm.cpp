#include "ordistill/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "ordistill/error.hpp"

namespace ordistill::netpbm {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

    std::size_t number() {
        skip_space_and_comments();
        std::size_t value = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (++digits > 9) fail(ErrorKind::Format, "netpbm header value too large");
            ++pos_;
        }
        if (digits == 0) fail(ErrorKind::Format, "netpbm header: expected a number");
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            fail(ErrorKind::Format, "netpbm header not terminated by whitespace");
        }
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

std::string encode(const Raster& image) {
    if (image.channels != 1 && image.channels != 3) {
        fail(ErrorKind::Format, "netpbm supports 1 or 3 channels, got " + std::to_string(image.channels));
    }
    if (image.pixels.size() != image.width * image.height * image.channels) {
        fail(ErrorKind::Format, "raster size does not match its dimensions");
    }
    std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                      std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

Raster decode(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        fail(ErrorKind::Format, "not a binary PGM/PPM (expected P5 or P6)");
    }
    Raster img;
    img.channels = bytes[1] == '6' ? 3 : 1;
    HeaderReader header(bytes);
    img.width = header.number();
    img.height = header.number();
    const std::size_t maxval = header.number();
    if (img.width == 0 || img.height == 0) fail(ErrorKind::Format, "netpbm image has zero extent");
    if (maxval != 255) fail(ErrorKind::Format, "only maxval 255 is supported, got " + std::to_string(maxval));
    const std::size_t offset = header.raster_offset();
    const std::size_t expected = img.width * img.height * img.channels;
    if (bytes.size() - offset < expected) fail(ErrorKind::Format, "netpbm raster truncated");
    const auto* raster = reinterpret_cast<const std::uint8_t*>(bytes.data() + offset);
    img.pixels.assign(raster, raster + expected);
    return img;
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) fail(ErrorKind::Io, "failed reading " + path.string());
    return std::move(buf).str();
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

Raster read_file(const std::filesystem::path& path) {
    const std::string bytes = read_bytes(path);
    try {
        return decode(bytes);
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

void write_file(const std::filesystem::path& path, const Raster& image) {
    write_bytes(path, encode(image));
}

}  // namespace ordistill::netpbm
