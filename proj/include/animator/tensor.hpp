#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace animator {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 tensor. This is the storage type for pixels, latents,
// canvases and anything that crosses a file boundary.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    const float& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(std::initializer_list<std::size_t> index) const;
    float& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    float at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    // Slice [begin, end) along the leading axis.
    Tensor slice0(std::size_t begin, std::size_t end) const;

    bool all_finite() const;
    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Concatenate along the leading axis; trailing dims must agree.
Tensor concat0(std::span<const Tensor> parts);

// FNV-1a over shape and raw bytes; used for freezing audits and run manifests.
std::uint64_t hash_tensor(const Tensor& t);
std::uint64_t hash_bytes(std::span<const std::byte> bytes, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

}  // namespace animator
