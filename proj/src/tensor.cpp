#include "animator/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "animator/error.hpp"

namespace animator {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor " + shape_str(shape_) + " given " + std::to_string(data_.size()) + " elements");
    }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape_[axis]) throw ShapeError("index out of range for " + shape_str(shape_));
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice0(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
        throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(shape_));
    }
    const std::size_t inner = shape_[0] ? numel() / shape_[0] : 0;
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * inner));
    return Tensor(std::move(out_shape), std::move(out));
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor concat0(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Shape out_shape = parts[0].shape();
    if (out_shape.empty()) throw ShapeError("concat of scalars");
    std::size_t lead = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), out_shape.begin() + 1)) {
            throw ShapeError("concat0 trailing dims differ: " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
        }
        lead += p.dim(0);
    }
    out_shape[0] = lead;
    std::vector<float> out;
    out.reserve(shape_numel(out_shape));
    for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
    return Tensor(std::move(out_shape), std::move(out));
}

std::uint64_t hash_bytes(std::span<const std::byte> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (auto b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t hash_tensor(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto d : t.shape()) {
        std::uint64_t v = d;
        h = hash_bytes(std::as_bytes(std::span<const std::uint64_t>(&v, 1)), h);
    }
    return hash_bytes(std::as_bytes(t.data()), h);
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

}  // namespace animator
