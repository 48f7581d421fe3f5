#include "ordistill/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace ordistill {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written in native little-endian order");

namespace {

constexpr char kMagic[4] = {'O', 'D', 'T', '1'};
constexpr std::uint32_t kMaxRank = 8;

template <typename V>
void put(std::ostream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
    V value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(V))) {
        fail(ErrorKind::Corrupt, "tensor blob truncated");
    }
    return value;
}

template <typename S, typename T>
std::vector<T> read_elements(std::istream& in, std::size_t count) {
    std::vector<S> raw(count);
    if (count && !in.read(reinterpret_cast<char*>(raw.data()),
                          static_cast<std::streamsize>(count * sizeof(S)))) {
        fail(ErrorKind::Corrupt, "tensor blob truncated");
    }
    if constexpr (std::is_same_v<S, T>) {
        return raw;
    } else {
        return std::vector<T>(raw.begin(), raw.end());
    }
}

}  // namespace

const char* dtype_name(DType dtype) {
    switch (dtype) {
        case DType::Float32: return "float32";
        case DType::Float64: return "float64";
    }
    return "unknown";
}

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor) {
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of<T>()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(T)));
    if (!out) fail(ErrorKind::Io, "failed writing tensor blob");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
    char magic[4];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail(ErrorKind::Corrupt, "bad tensor blob magic");
    }
    const auto code = get<std::uint32_t>(in);
    const auto rank = get<std::uint32_t>(in);
    if (rank > kMaxRank) fail(ErrorKind::Corrupt, "tensor blob rank " + std::to_string(rank) + " too large");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
        const auto extent = get<std::uint64_t>(in);
        if (extent == 0 || extent > (std::uint64_t{1} << 32)) {
            fail(ErrorKind::Corrupt, "tensor blob extent out of range");
        }
        e = static_cast<std::size_t>(extent);
        count *= e;
    }
    if (count > (std::size_t{1} << 31)) fail(ErrorKind::Corrupt, "tensor blob too large");
    switch (static_cast<DType>(code)) {
        case DType::Float32: return Tensor<T>(shape, read_elements<float, T>(in, count));
        case DType::Float64: return Tensor<T>(shape, read_elements<double, T>(in, count));
    }
    fail(ErrorKind::Corrupt, "unknown tensor dtype code " + std::to_string(code));
}

template <typename T>
std::string encode_tensor(const Tensor<T>& tensor) {
    std::ostringstream out(std::ios::binary);
    write_tensor(out, tensor);
    return std::move(out).str();
}

template <typename T>
Tensor<T> decode_tensor(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    Tensor<T> t = read_tensor<T>(in);
    if (in.peek() != std::char_traits<char>::eof()) {
        fail(ErrorKind::Corrupt, "trailing bytes after tensor blob");
    }
    return t;
}

#define ORDISTILL_INSTANTIATE(T)                                    \
    template void write_tensor<T>(std::ostream&, const Tensor<T>&); \
    template Tensor<T> read_tensor<T>(std::istream&);               \
    template std::string encode_tensor<T>(const Tensor<T>&);        \
    template Tensor<T> decode_tensor<T>(const std::string&);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
