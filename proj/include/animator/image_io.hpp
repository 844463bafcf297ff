#pragma once

#include <filesystem>

#include "animator/tensor.hpp"

namespace animator {

// 8-bit RGB PNG <-> H x W x 3 float tensor in [0,1]. Values are clamped and
// rounded to the nearest 1/255 on write.
void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

// Round-trip a float image through 8-bit quantization without touching disk.
Tensor quantize_u8(const Tensor& image);

}  // namespace animator
