#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ordistill/tensor.hpp"

// Binary tensor blob, little-endian:
//   "ODT1" | u32 dtype code | u32 rank | u64 extents[rank] | row-major elements
namespace ordistill {

enum class DType : std::uint32_t { Float32 = 1, Float64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Float32; }
template <>
constexpr DType dtype_of<double>() { return DType::Float64; }

const char* dtype_name(DType dtype);

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor);

/// Reads one blob. Elements stored in the other precision are converted.
/// Throws ErrorKind::Corrupt on a bad magic, dtype, or truncated stream.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
std::string encode_tensor(const Tensor<T>& tensor);
template <typename T>
Tensor<T> decode_tensor(const std::string& bytes);

}  // namespace ordistill
