#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/errors.hpp"

namespace cvr {

// Little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v), 2); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put(bits, 8);
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put(bits, 4);
    }
    void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void text(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    void put(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes_;
};

// Little-endian cursor over a byte buffer; every read is bounds-checked and
// reports the offset at which data ran out.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data, std::size_t base_offset = 0)
        : data_(data), base_(base_offset) {}

    std::size_t offset() const { return base_ + pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
    std::uint64_t u64() { return get(8, "u64"); }
    std::int16_t i16() { return static_cast<std::int16_t>(static_cast<std::uint16_t>(get(2, "i16"))); }
    double f64() {
        const std::uint64_t bits = get(8, "f64");
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    float f32() {
        const auto bits = static_cast<std::uint32_t>(get(4, "f32"));
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::span<const std::uint8_t> raw(std::size_t n, const char* what = "bytes") {
        require(n, what);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    void expect_magic(std::string_view magic) {
        const std::size_t at = offset();
        auto got = raw(magic.size(), "magic");
        if (std::memcmp(got.data(), magic.data(), magic.size()) != 0) {
            throw ParseError("bad magic, expected '" + std::string(magic) + "'", at);
        }
    }
    // Fails before an allocation when a declared count cannot fit in the rest of the buffer.
    void require(std::size_t n, const char* what) const {
        if (n > remaining()) {
            throw ParseError(std::string("truncated input while reading ") + what + " (need " +
                                 std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")",
                             offset());
        }
    }

private:
    std::uint64_t get(int width, const char* what) {
        require(static_cast<std::size_t>(width), what);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cvr
