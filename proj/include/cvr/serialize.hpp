#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cvr/binary_io.hpp"
#include "cvr/tensor.hpp"

namespace cvr {

// "MTEN" container: magic, u32 version, 5 x u64 shape, u8 dtype tag, raw
// little-endian values.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

void write_tensor(ByteWriter& out, const Tensor& tensor, DType dtype = DType::f64);
Tensor read_tensor(ByteReader& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor, DType dtype = DType::f64);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace cvr
