#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cvr/rng.hpp"
#include "cvr/tensor.hpp"

namespace cvr::codec {

inline constexpr std::size_t kMacroblock = 16;
inline constexpr std::size_t kDefaultGopSize = 12;
inline constexpr int kDefaultSearchRange = 4;

// Interleaved 8-bit RGB image, row-major H x W x 3.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

struct RawVideo {
    std::size_t height = 0;
    std::size_t width = 0;
    double fps = 25.0;
    std::vector<Image> frames;

    friend bool operator==(const RawVideo&, const RawVideo&) = default;
};

// Displacement of a macroblock's content relative to the reference frame:
// cur(p) is predicted by ref(p - mv).
struct MotionVector {
    std::int16_t dy = 0;
    std::int16_t dx = 0;
    friend bool operator==(const MotionVector&, const MotionVector&) = default;
};

struct PFrame {
    std::size_t mb_rows = 0;
    std::size_t mb_cols = 0;
    std::vector<MotionVector> mv;    // mb_rows x mb_cols, row-major
    std::vector<std::int16_t> residual;  // H x W x 3, interleaved

    const MotionVector& mv_at_pixel(std::size_t y, std::size_t x) const {
        return mv[(y / kMacroblock) * mb_cols + x / kMacroblock];
    }
    friend bool operator==(const PFrame&, const PFrame&) = default;
};

struct Gop {
    Image iframe;
    std::vector<PFrame> pframes;
    std::size_t frame_count() const { return 1 + pframes.size(); }
    friend bool operator==(const Gop&, const Gop&) = default;
};

struct GopStream {
    std::size_t gop_size = kDefaultGopSize;
    int search_range = kDefaultSearchRange;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Gop> gops;

    std::size_t frame_count() const;
    friend bool operator==(const GopStream&, const GopStream&) = default;
};

// Per-pixel displacement and correction relative to the GOP's I-frame for
// P-frame t (1-based within the GOP).
struct AccumulatedFrame {
    std::vector<std::int32_t> mv;        // H x W x 2 as (dy, dx)
    std::vector<std::int32_t> residual;  // H x W x 3
};

struct AccumulatedFields {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<AccumulatedFrame> frames;  // index t-1 for P-frame t
};

// ---------------------------------------------------------------------------
// Encoding and decoding
// ---------------------------------------------------------------------------

// Exhaustive SAD search per macroblock over [-range, range]^2; ties go to the
// smallest |dy|+|dx|, then lexicographic (dy, dx). Reference pixels outside
// the frame are read with clamped coordinates.
PFrame block_match(const Image& ref, const Image& cur, int range);

// Motion-compensated prediction of `ref` under the macroblock field of `p`
// plus the stored residual. Values are exact integers before clamping.
Image apply_pframe(const Image& ref, const PFrame& p);

GopStream encode(const RawVideo& video, std::size_t gop_size = kDefaultGopSize,
                 int range = kDefaultSearchRange);

std::vector<Image> decode_gop(const Gop& gop, std::size_t height, std::size_t width);
RawVideo decode_sequential(const GopStream& stream, double fps = 25.0);

AccumulatedFields accumulate(const Gop& gop, std::size_t height, std::size_t width);

// I(p - D_t(p)) + R_t(p); t = 0 returns the I-frame.
Image reconstruct_from_accumulated(const Gop& gop, const AccumulatedFields& fields, std::size_t t);

// ---------------------------------------------------------------------------
// Clip sampling
// ---------------------------------------------------------------------------

enum class SampleMode { train, test };

struct ClipSample {
    Tensor rgb;  // (1, 3, T, Hc, Wc), values in [0, 1]
    Tensor mvr;  // (1, 5, T, Hc, Wc), channels [dy, dx, res_r, res_g, res_b]
    int label = -1;
};

// Stream plus cached accumulation, built once and shared by samplers.
struct DecodedStream {
    const GopStream* stream = nullptr;
    std::vector<AccumulatedFields> fields;  // one per GOP

    explicit DecodedStream(const GopStream& s);
};

// Frame indices for clip `clip_index` of `n_clips`: stride = T / n_frames,
// idx_k = floor(k * stride + (clip_index + 0.5) * stride / n_clips), clamped.
std::vector<std::size_t> clip_frame_indices(std::size_t total_frames, std::size_t n_frames,
                                            std::size_t clip_index, std::size_t n_clips);

struct ClipOptions {
    std::size_t n_frames = 8;
    std::size_t crop_h = 48;
    std::size_t crop_w = 48;
    SampleMode mode = SampleMode::test;
    std::size_t clip_index = 0;
    std::size_t n_clips = 1;
    bool flip = true;  // train mode only: random horizontal flip
};

// `rng` is required in train mode (random crop, random temporal phase within
// one stride, optional horizontal flip); clip_index is ignored there.
ClipSample sample_clip(const DecodedStream& decoded, const ClipOptions& options, int label,
                       Rng* rng = nullptr);
ClipSample sample_clip(const GopStream& stream, const ClipOptions& options, int label,
                       Rng* rng = nullptr);

// ---------------------------------------------------------------------------
// Container I/O ("GOPS")
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kStreamFormatVersion = 1;

std::vector<std::uint8_t> serialize_stream(const GopStream& stream);
GopStream parse_stream(std::span<const std::uint8_t> bytes);
void write_stream(const GopStream& stream, const std::filesystem::path& path);
GopStream read_stream(const std::filesystem::path& path);

struct StreamHeader {
    std::uint32_t version = 0;
    std::uint16_t gop_size = 0;
    std::uint16_t search_range = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint32_t gop_count = 0;
};
StreamHeader parse_stream_header(std::span<const std::uint8_t> bytes);

// Raw video container ("RAWV"): magic, u32 version, u32 frame count,
// u16 H, u16 W, f64 fps, then frames as interleaved RGB bytes.
std::vector<std::uint8_t> serialize_raw_video(const RawVideo& video);
RawVideo parse_raw_video(std::span<const std::uint8_t> bytes);

}  // namespace cvr::codec
