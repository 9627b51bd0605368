#include "cvr/serialize.hpp"

#include <fstream>
#include <iterator>
#include <limits>

namespace cvr {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_tensor(ByteWriter& out, const Tensor& tensor, DType dtype) {
    out.text("MTEN");
    out.u32(kTensorFormatVersion);
    for (std::size_t d : tensor.shape().dims) out.u64(d);
    out.u8(static_cast<std::uint8_t>(dtype));
    for (double v : tensor.data()) {
        if (dtype == DType::f64) {
            out.f64(v);
        } else {
            out.f32(static_cast<float>(v));
        }
    }
}

Tensor read_tensor(ByteReader& in) {
    in.expect_magic("MTEN");
    const std::size_t version_at = in.offset();
    const std::uint32_t version = in.u32();
    if (version != kTensorFormatVersion) {
        throw ParseError("unsupported tensor version " + std::to_string(version), version_at);
    }
    const std::size_t shape_at = in.offset();
    std::array<std::uint64_t, 5> dims{};
    std::uint64_t numel = 1;
    for (auto& d : dims) {
        d = in.u64();
        if (d == 0) throw ParseError("tensor extent of 0", shape_at);
        if (numel > std::numeric_limits<std::uint64_t>::max() / d) {
            throw ParseError("tensor shape overflows", shape_at);
        }
        numel *= d;
    }
    const std::size_t tag_at = in.offset();
    const std::uint8_t tag = in.u8();
    if (tag > 1) throw ParseError("unknown dtype tag " + std::to_string(tag), tag_at);
    const std::uint64_t width = tag == 0 ? 8 : 4;
    if (numel > in.remaining() / width) {
        throw ParseError("truncated input: tensor data shorter than shape", in.offset());
    }

    std::vector<double> values(numel);
    for (auto& v : values) v = tag == 0 ? in.f64() : static_cast<double>(in.f32());
    return Tensor(Shape(dims[0], dims[1], dims[2], dims[3], dims[4]), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor, DType dtype) {
    ByteWriter w;
    write_tensor(w, tensor, dtype);
    write_file_bytes(path, w.bytes());
}

Tensor load_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    return read_tensor(r);
}

}  // namespace cvr
