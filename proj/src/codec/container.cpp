#include <algorithm>
#include <cstdlib>
#include <string>

#include "cvr/binary_io.hpp"
#include "cvr/codec.hpp"
#include "cvr/errors.hpp"

namespace cvr::codec {

namespace {

StreamHeader read_header(ByteReader& in) {
    in.expect_magic("GOPS");
    StreamHeader h;
    const std::size_t version_at = in.offset();
    h.version = in.u32();
    if (h.version != kStreamFormatVersion) {
        throw ParseError("unsupported stream version " + std::to_string(h.version), version_at);
    }
    const std::size_t fields_at = in.offset();
    h.gop_size = in.u16();
    h.search_range = in.u16();
    h.height = in.u16();
    h.width = in.u16();
    h.gop_count = in.u32();
    if (h.gop_size == 0) throw ParseError("gop_size of 0", fields_at);
    if (h.height == 0 || h.width == 0 || h.height % kMacroblock != 0 || h.width % kMacroblock != 0) {
        throw ParseError("frame extents " + std::to_string(h.height) + "x" + std::to_string(h.width) +
                             " are not positive multiples of 16",
                         fields_at + 4);
    }
    return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_stream(const GopStream& stream) {
    ByteWriter w;
    w.text("GOPS");
    w.u32(kStreamFormatVersion);
    w.u16(static_cast<std::uint16_t>(stream.gop_size));
    w.u16(static_cast<std::uint16_t>(stream.search_range));
    w.u16(static_cast<std::uint16_t>(stream.height));
    w.u16(static_cast<std::uint16_t>(stream.width));
    w.u32(static_cast<std::uint32_t>(stream.gops.size()));
    const std::size_t plane = stream.height * stream.width;
    for (const auto& gop : stream.gops) {
        w.raw(gop.iframe.rgb);
        w.u16(static_cast<std::uint16_t>(gop.pframes.size()));
        for (const auto& p : gop.pframes) {
            for (const auto& m : p.mv) {
                w.i16(m.dy);
                w.i16(m.dx);
            }
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i) w.i16(p.residual[i * 3 + c]);
        }
    }
    return w.take();
}

StreamHeader parse_stream_header(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    return read_header(in);
}

GopStream parse_stream(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    const StreamHeader h = read_header(in);

    GopStream stream;
    stream.gop_size = h.gop_size;
    stream.search_range = h.search_range;
    stream.height = h.height;
    stream.width = h.width;
    const std::size_t plane = stream.height * stream.width;
    const std::size_t mb_rows = stream.height / kMacroblock;
    const std::size_t mb_cols = stream.width / kMacroblock;
    // Each GOP needs at least an I-frame and a P-count.
    if (h.gop_count > in.remaining() / (plane * 3 + 2)) {
        throw ParseError("truncated input: " + std::to_string(h.gop_count) + " GOPs declared", in.offset());
    }
    stream.gops.reserve(h.gop_count);
    for (std::uint32_t g = 0; g < h.gop_count; ++g) {
        Gop gop;
        gop.iframe = Image(stream.height, stream.width);
        const auto iframe = in.raw(plane * 3, "I-frame");
        std::copy(iframe.begin(), iframe.end(), gop.iframe.rgb.begin());
        const std::size_t count_at = in.offset();
        const std::uint16_t p_count = in.u16();
        if (p_count + 1u > stream.gop_size) {
            throw ParseError("GOP " + std::to_string(g) + " holds " + std::to_string(p_count) +
                                 " P-frames, more than gop_size - 1",
                             count_at);
        }
        if (g + 1 < h.gop_count && p_count + 1u != stream.gop_size) {
            throw ParseError("GOP " + std::to_string(g) + " is not the last and holds fewer than gop_size frames",
                             count_at);
        }
        in.require(static_cast<std::size_t>(p_count) * (mb_rows * mb_cols * 4 + plane * 6), "P-frames");
        gop.pframes.resize(p_count);
        for (auto& p : gop.pframes) {
            p.mb_rows = mb_rows;
            p.mb_cols = mb_cols;
            p.mv.resize(mb_rows * mb_cols);
            for (auto& m : p.mv) {
                const std::size_t at = in.offset();
                m.dy = in.i16();
                m.dx = in.i16();
                if (std::abs(m.dy) > h.search_range || std::abs(m.dx) > h.search_range) {
                    throw ParseError("motion vector outside search range", at);
                }
            }
            p.residual.resize(plane * 3);
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t at = in.offset();
                    const std::int16_t r = in.i16();
                    if (r < -255 || r > 255) throw ParseError("residual outside [-255, 255]", at);
                    p.residual[i * 3 + c] = r;
                }
            }
        }
        stream.gops.push_back(std::move(gop));
    }
    if (!in.at_end()) throw ParseError("trailing bytes after last GOP", in.offset());
    return stream;
}

void write_stream(const GopStream& stream, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_stream(stream));
}

GopStream read_stream(const std::filesystem::path& path) { return parse_stream(read_file_bytes(path)); }

std::vector<std::uint8_t> serialize_raw_video(const RawVideo& video) {
    ByteWriter w;
    w.text("RAWV");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(video.frames.size()));
    w.u16(static_cast<std::uint16_t>(video.height));
    w.u16(static_cast<std::uint16_t>(video.width));
    w.f64(video.fps);
    for (const auto& f : video.frames) w.raw(f.rgb);
    return w.take();
}

RawVideo parse_raw_video(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("RAWV");
    const std::size_t version_at = in.offset();
    if (in.u32() != 1) throw ParseError("unsupported raw video version", version_at);
    RawVideo video;
    const std::uint32_t count = in.u32();
    video.height = in.u16();
    video.width = in.u16();
    video.fps = in.f64();
    const std::size_t frame_bytes = video.height * video.width * 3;
    if (frame_bytes == 0) throw ParseError("raw video with zero-sized frames", version_at + 8);
    if (count > in.remaining() / frame_bytes) {
        throw ParseError("truncated input: " + std::to_string(count) + " frames declared", in.offset());
    }
    video.frames.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Image img(video.height, video.width);
        const auto px = in.raw(frame_bytes, "frame");
        std::copy(px.begin(), px.end(), img.rgb.begin());
        video.frames.push_back(std::move(img));
    }
    if (!in.at_end()) throw ParseError("trailing bytes after last frame", in.offset());
    return video;
}

}  // namespace cvr::codec
