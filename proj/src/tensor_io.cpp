#include "animator/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "animator/error.hpp"

namespace animator {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

}  // namespace

std::vector<std::uint8_t> serialize_tensor(const Tensor& t) {
    if (!t.all_finite()) throw FormatError("refusing to write non-finite tensor");
    nlohmann::json header = {{"dtype", "f32"}, {"shape", t.shape()}, {"order", "row-major"}};
    const std::string text = header.dump();
    const auto header_len = static_cast<std::uint32_t>(text.size());

    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + t.numel() * 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((header_len >> (8 * i)) & 0xFF));
    out.insert(out.end(), text.begin(), text.end());
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
    out.insert(out.end(), raw, raw + t.numel() * sizeof(float));
    return out;
}

Tensor deserialize_tensor(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic");
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    if (bytes.size() < 8ULL + header_len) throw FormatError("truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("unreadable header: ") + e.what());
    }
    if (!header.is_object() || header.value("dtype", "") != "f32") throw FormatError("dtype must be f32");
    if (header.value("order", "") != "row-major") throw FormatError("order must be row-major");
    if (!header.contains("shape") || !header["shape"].is_array()) throw FormatError("missing shape");

    Shape shape;
    for (const auto& d : header["shape"]) {
        if (!d.is_number_unsigned()) throw FormatError("shape entries must be non-negative integers");
        shape.push_back(d.get<std::size_t>());
    }
    const std::size_t payload = bytes.size() - 8 - header_len;
    const std::size_t expected = shape_numel(shape) * sizeof(float);
    if (payload < expected) throw FormatError("truncated payload for shape " + shape_str(shape));
    if (payload > expected) throw FormatError("payload longer than shape " + shape_str(shape));

    std::vector<float> data(shape_numel(shape));
    std::memcpy(data.data(), bytes.data() + 8 + header_len, expected);
    return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = serialize_tensor(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_tensor(bytes);
}

}  // namespace animator
