#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "animator/tensor.hpp"

namespace animator {

// Portable tensor container:
//   "DAT1" | u32 LE header length | UTF-8 JSON header | raw LE float32 payload
// Header: {"dtype":"f32","shape":[...],"order":"row-major"}.
std::vector<std::uint8_t> serialize_tensor(const Tensor& t);
Tensor deserialize_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace animator
