#include "cvr/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "cvr/errors.hpp"

namespace cvr::codec {

namespace {

inline long clamp_coord(long v, std::size_t extent) {
    return std::clamp(v, 0L, static_cast<long>(extent) - 1);
}

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

void check_macroblock_extents(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0 || h % kMacroblock != 0 || w % kMacroblock != 0) {
        const std::size_t pad_h = (kMacroblock - h % kMacroblock) % kMacroblock;
        const std::size_t pad_w = (kMacroblock - w % kMacroblock) % kMacroblock;
        throw GeometryError("frame extents " + std::to_string(h) + "x" + std::to_string(w) +
                            " are not multiples of " + std::to_string(kMacroblock) + "; pad by " +
                            std::to_string(pad_h) + " rows and " + std::to_string(pad_w) + " columns");
    }
}

// SAD of one macroblock for displacement (dy, dx); gives up once `limit` is exceeded.
std::uint64_t block_sad(const Image& ref, const Image& cur, std::size_t by, std::size_t bx, int dy, int dx,
                        std::uint64_t limit) {
    const long y0 = static_cast<long>(by) - dy;
    const long x0 = static_cast<long>(bx) - dx;
    const bool inside = y0 >= 0 && x0 >= 0 && y0 + static_cast<long>(kMacroblock) <= static_cast<long>(ref.height) &&
                        x0 + static_cast<long>(kMacroblock) <= static_cast<long>(ref.width);
    std::uint64_t sad = 0;
    for (std::size_t y = 0; y < kMacroblock; ++y) {
        const std::uint8_t* c = &cur.rgb[((by + y) * cur.width + bx) * 3];
        if (inside) {
            const std::uint8_t* r = &ref.rgb[((static_cast<std::size_t>(y0) + y) * ref.width +
                                              static_cast<std::size_t>(x0)) * 3];
            for (std::size_t i = 0; i < kMacroblock * 3; ++i) sad += static_cast<std::uint64_t>(std::abs(c[i] - r[i]));
        } else {
            const auto ry = static_cast<std::size_t>(clamp_coord(y0 + static_cast<long>(y), ref.height));
            for (std::size_t x = 0; x < kMacroblock; ++x) {
                const auto rx = static_cast<std::size_t>(clamp_coord(x0 + static_cast<long>(x), ref.width));
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    sad += static_cast<std::uint64_t>(std::abs(c[x * 3 + ch] - ref.at(ry, rx, ch)));
                }
            }
        }
        if (sad > limit) return sad;
    }
    return sad;
}

}  // namespace

std::size_t GopStream::frame_count() const {
    std::size_t total = 0;
    for (const auto& g : gops) total += g.frame_count();
    return total;
}

PFrame block_match(const Image& ref, const Image& cur, int range) {
    if (ref.height != cur.height || ref.width != cur.width) {
        throw GeometryError("block_match: reference " + std::to_string(ref.height) + "x" +
                            std::to_string(ref.width) + " and current " + std::to_string(cur.height) + "x" +
                            std::to_string(cur.width) + " differ in size");
    }
    check_macroblock_extents(cur.height, cur.width);
    if (range < 0) throw PreconditionError("block_match: search range must be >= 0");

    PFrame p;
    p.mb_rows = cur.height / kMacroblock;
    p.mb_cols = cur.width / kMacroblock;
    p.mv.resize(p.mb_rows * p.mb_cols);
    for (std::size_t mr = 0; mr < p.mb_rows; ++mr) {
        for (std::size_t mc = 0; mc < p.mb_cols; ++mc) {
            const std::size_t by = mr * kMacroblock, bx = mc * kMacroblock;
            std::uint64_t best_sad = std::numeric_limits<std::uint64_t>::max();
            int best_cost = 0, best_dy = 0, best_dx = 0;
            for (int dy = -range; dy <= range; ++dy) {
                for (int dx = -range; dx <= range; ++dx) {
                    const std::uint64_t sad = block_sad(ref, cur, by, bx, dy, dx, best_sad);
                    const int cost = std::abs(dy) + std::abs(dx);
                    // Candidates are visited in lexicographic (dy, dx) order, so
                    // the first one at equal (sad, cost) wins.
                    if (sad < best_sad || (sad == best_sad && cost < best_cost)) {
                        best_sad = sad;
                        best_cost = cost;
                        best_dy = dy;
                        best_dx = dx;
                    }
                }
            }
            p.mv[mr * p.mb_cols + mc] = {static_cast<std::int16_t>(best_dy), static_cast<std::int16_t>(best_dx)};
        }
    }

    p.residual.resize(cur.rgb.size());
    for (std::size_t y = 0; y < cur.height; ++y) {
        for (std::size_t x = 0; x < cur.width; ++x) {
            const MotionVector& m = p.mv_at_pixel(y, x);
            const auto ry = static_cast<std::size_t>(clamp_coord(static_cast<long>(y) - m.dy, ref.height));
            const auto rx = static_cast<std::size_t>(clamp_coord(static_cast<long>(x) - m.dx, ref.width));
            for (std::size_t c = 0; c < 3; ++c) {
                p.residual[(y * cur.width + x) * 3 + c] =
                    static_cast<std::int16_t>(static_cast<int>(cur.at(y, x, c)) - ref.at(ry, rx, c));
            }
        }
    }
    return p;
}

Image apply_pframe(const Image& ref, const PFrame& p) {
    Image out(ref.height, ref.width);
    for (std::size_t y = 0; y < ref.height; ++y) {
        for (std::size_t x = 0; x < ref.width; ++x) {
            const MotionVector& m = p.mv_at_pixel(y, x);
            const auto ry = static_cast<std::size_t>(clamp_coord(static_cast<long>(y) - m.dy, ref.height));
            const auto rx = static_cast<std::size_t>(clamp_coord(static_cast<long>(x) - m.dx, ref.width));
            for (std::size_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = clamp_u8(ref.at(ry, rx, c) + p.residual[(y * ref.width + x) * 3 + c]);
            }
        }
    }
    return out;
}

GopStream encode(const RawVideo& video, std::size_t gop_size, int range) {
    if (video.frames.empty()) throw PreconditionError("encode: video has no frames");
    if (gop_size == 0) throw PreconditionError("encode: gop_size must be >= 1");
    check_macroblock_extents(video.height, video.width);
    for (const auto& f : video.frames) {
        if (f.height != video.height || f.width != video.width || f.rgb.size() != video.height * video.width * 3) {
            throw GeometryError("encode: frame size differs from video header");
        }
    }

    GopStream stream;
    stream.gop_size = gop_size;
    stream.search_range = range;
    stream.height = video.height;
    stream.width = video.width;
    for (std::size_t i = 0; i < video.frames.size(); ++i) {
        if (i % gop_size == 0) {
            stream.gops.push_back(Gop{video.frames[i], {}});
        } else {
            // Lossless coding: the previous decoded frame equals the source frame.
            stream.gops.back().pframes.push_back(block_match(video.frames[i - 1], video.frames[i], range));
        }
    }
    return stream;
}

std::vector<Image> decode_gop(const Gop& gop, std::size_t height, std::size_t width) {
    if (gop.iframe.height != height || gop.iframe.width != width) {
        throw GeometryError("decode: I-frame size differs from stream header");
    }
    std::vector<Image> frames;
    frames.reserve(gop.frame_count());
    frames.push_back(gop.iframe);
    for (const auto& p : gop.pframes) frames.push_back(apply_pframe(frames.back(), p));
    return frames;
}

RawVideo decode_sequential(const GopStream& stream, double fps) {
    RawVideo video;
    video.height = stream.height;
    video.width = stream.width;
    video.fps = fps;
    for (const auto& gop : stream.gops) {
        auto frames = decode_gop(gop, stream.height, stream.width);
        for (auto& f : frames) video.frames.push_back(std::move(f));
    }
    return video;
}

AccumulatedFields accumulate(const Gop& gop, std::size_t height, std::size_t width) {
    AccumulatedFields acc;
    acc.height = height;
    acc.width = width;
    acc.frames.reserve(gop.pframes.size());

    // D_0 = 0, R_0 = 0. For t >= 1 with q = clamp(p - M_t(p)):
    //   D_t(p) = (p - q) + D_{t-1}(q),  R_t(p) = r_t(p) + R_{t-1}(q).
    // Using the clamped step p - q keeps p - D_t(p) equal to the traced
    // source pixel even when a vector points outside the frame.
    std::vector<std::int32_t> prev_mv(height * width * 2, 0);
    std::vector<std::int32_t> prev_res(height * width * 3, 0);
    for (const auto& p : gop.pframes) {
        AccumulatedFrame cur;
        cur.mv.resize(prev_mv.size());
        cur.residual.resize(prev_res.size());
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const MotionVector& m = p.mv_at_pixel(y, x);
                const auto qy = static_cast<std::size_t>(clamp_coord(static_cast<long>(y) - m.dy, height));
                const auto qx = static_cast<std::size_t>(clamp_coord(static_cast<long>(x) - m.dx, width));
                const std::size_t pi = y * width + x;
                const std::size_t qi = qy * width + qx;
                cur.mv[pi * 2 + 0] = static_cast<std::int32_t>(y) - static_cast<std::int32_t>(qy) + prev_mv[qi * 2 + 0];
                cur.mv[pi * 2 + 1] = static_cast<std::int32_t>(x) - static_cast<std::int32_t>(qx) + prev_mv[qi * 2 + 1];
                for (std::size_t c = 0; c < 3; ++c) {
                    cur.residual[pi * 3 + c] = p.residual[pi * 3 + c] + prev_res[qi * 3 + c];
                }
            }
        }
        prev_mv = cur.mv;
        prev_res = cur.residual;
        acc.frames.push_back(std::move(cur));
    }
    return acc;
}

Image reconstruct_from_accumulated(const Gop& gop, const AccumulatedFields& fields, std::size_t t) {
    if (t >= gop.frame_count()) {
        throw IndexError("reconstruct_from_accumulated: frame " + std::to_string(t) + " outside GOP of " +
                         std::to_string(gop.frame_count()) + " frames");
    }
    if (t == 0) return gop.iframe;
    if (t > fields.frames.size()) throw IndexError("reconstruct_from_accumulated: fields missing for frame " + std::to_string(t));
    const AccumulatedFrame& f = fields.frames[t - 1];
    const Image& iframe = gop.iframe;
    Image out(iframe.height, iframe.width);
    for (std::size_t y = 0; y < iframe.height; ++y) {
        for (std::size_t x = 0; x < iframe.width; ++x) {
            const std::size_t pi = y * iframe.width + x;
            const auto sy = static_cast<std::size_t>(clamp_coord(static_cast<long>(y) - f.mv[pi * 2], iframe.height));
            const auto sx = static_cast<std::size_t>(clamp_coord(static_cast<long>(x) - f.mv[pi * 2 + 1], iframe.width));
            for (std::size_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = clamp_u8(iframe.at(sy, sx, c) + f.residual[pi * 3 + c]);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Clip sampling
// ---------------------------------------------------------------------------

DecodedStream::DecodedStream(const GopStream& s) : stream(&s) {
    fields.reserve(s.gops.size());
    for (const auto& gop : s.gops) fields.push_back(accumulate(gop, s.height, s.width));
}

std::vector<std::size_t> clip_frame_indices(std::size_t total_frames, std::size_t n_frames,
                                            std::size_t clip_index, std::size_t n_clips) {
    if (n_frames == 0 || n_frames > total_frames) {
        throw PreconditionError("clip sampling: n_frames " + std::to_string(n_frames) + " must be in [1, " +
                                std::to_string(total_frames) + "]");
    }
    if (n_clips == 0 || clip_index >= n_clips) {
        throw PreconditionError("clip sampling: clip_index " + std::to_string(clip_index) +
                                " outside [0, " + std::to_string(n_clips) + ")");
    }
    const double stride = static_cast<double>(total_frames) / static_cast<double>(n_frames);
    const double offset = (static_cast<double>(clip_index) + 0.5) * stride / static_cast<double>(n_clips);
    std::vector<std::size_t> idx(n_frames);
    for (std::size_t k = 0; k < n_frames; ++k) {
        const auto v = static_cast<std::size_t>(std::floor(static_cast<double>(k) * stride + offset));
        idx[k] = std::min(v, total_frames - 1);
    }
    return idx;
}

ClipSample sample_clip(const DecodedStream& decoded, const ClipOptions& options, int label, Rng* rng) {
    const GopStream& stream = *decoded.stream;
    const std::size_t H = stream.height, W = stream.width;
    if (options.crop_h == 0 || options.crop_w == 0 || options.crop_h > H || options.crop_w > W) {
        throw GeometryError("sample_clip: crop " + std::to_string(options.crop_h) + "x" +
                            std::to_string(options.crop_w) + " does not fit frame " + std::to_string(H) + "x" +
                            std::to_string(W));
    }
    auto indices = clip_frame_indices(stream.frame_count(), options.n_frames, options.clip_index, options.n_clips);

    std::size_t y0 = (H - options.crop_h) / 2;
    std::size_t x0 = (W - options.crop_w) / 2;
    bool flip = false;
    if (options.mode == SampleMode::train) {
        if (!rng) throw PreconditionError("sample_clip: train mode requires a random generator");
        y0 = static_cast<std::size_t>(rng->below(H - options.crop_h + 1));
        x0 = static_cast<std::size_t>(rng->below(W - options.crop_w + 1));
        // Random phase within one stride, so training also sees clips that
        // land on I-frames.
        const double total = static_cast<double>(stream.frame_count());
        const double stride = total / static_cast<double>(options.n_frames);
        const double phase = rng->uniform() * stride;
        for (std::size_t k = 0; k < indices.size(); ++k)
            indices[k] = std::min(static_cast<std::size_t>(std::floor(static_cast<double>(k) * stride + phase)),
                                  stream.frame_count() - 1);
        flip = options.flip && rng->coin();
    }

    const std::size_t T = options.n_frames, ch = options.crop_h, cw = options.crop_w;
    const Shape rgb_shape(1, 3, T, ch, cw);
    const Shape mvr_shape(1, 5, T, ch, cw);
    std::vector<double> rgb(rgb_shape.numel());
    std::vector<double> mvr(mvr_shape.numel(), 0.0);
    const double mv_scale = stream.search_range > 0 ? 1.0 / stream.search_range : 1.0;
    const double px_scale = 1.0 / 255.0;

    // Map global frame index to (gop, position) for possibly short final GOPs.
    std::vector<std::size_t> gop_start(stream.gops.size());
    for (std::size_t g = 0, acc = 0; g < stream.gops.size(); ++g) {
        gop_start[g] = acc;
        acc += stream.gops[g].frame_count();
    }

    for (std::size_t k = 0; k < T; ++k) {
        const std::size_t frame = indices[k];
        const std::size_t g =
            static_cast<std::size_t>(std::upper_bound(gop_start.begin(), gop_start.end(), frame) - gop_start.begin()) - 1;
        const std::size_t t = frame - gop_start[g];
        const Image& iframe = stream.gops[g].iframe;
        const AccumulatedFrame* acc = t == 0 ? nullptr : &decoded.fields[g].frames[t - 1];
        for (std::size_t y = 0; y < ch; ++y) {
            for (std::size_t x = 0; x < cw; ++x) {
                const std::size_t sx = x0 + (flip ? cw - 1 - x : x);
                const std::size_t sy = y0 + y;
                for (std::size_t c = 0; c < 3; ++c) {
                    rgb[rgb_shape.offset(0, c, k, y, x)] = iframe.at(sy, sx, c) * px_scale;
                }
                if (acc) {
                    const std::size_t pi = sy * W + sx;
                    const double dy = acc->mv[pi * 2] * mv_scale;
                    const double dx = acc->mv[pi * 2 + 1] * mv_scale;
                    mvr[mvr_shape.offset(0, 0, k, y, x)] = dy;
                    mvr[mvr_shape.offset(0, 1, k, y, x)] = flip ? -dx : dx;
                    for (std::size_t c = 0; c < 3; ++c) {
                        mvr[mvr_shape.offset(0, 2 + c, k, y, x)] = acc->residual[pi * 3 + c] * px_scale;
                    }
                }
            }
        }
    }
    return ClipSample{Tensor(rgb_shape, std::move(rgb)), Tensor(mvr_shape, std::move(mvr)), label};
}

ClipSample sample_clip(const GopStream& stream, const ClipOptions& options, int label, Rng* rng) {
    const DecodedStream decoded(stream);
    return sample_clip(decoded, options, label, rng);
}

}  // namespace cvr::codec
