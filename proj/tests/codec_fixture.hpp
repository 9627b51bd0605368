#pragma once

#include <cstddef>

#include "cvr/codec.hpp"

namespace cvr::testing {

// 32x32, 14 frames: a procedural texture drifting by (+1, -1) per frame with
// a static 8x8 patch. Integer-only so the encoded bytes are platform-stable.
inline codec::RawVideo golden_video() {
    codec::RawVideo v;
    v.height = 32;
    v.width = 32;
    for (long t = 0; t < 14; ++t) {
        codec::Image img(32, 32);
        for (long y = 0; y < 32; ++y)
            for (long x = 0; x < 32; ++x) {
                const long sy = y - t, sx = x + t;
                for (long c = 0; c < 3; ++c) {
                    long val = (sx * 7 + sy * 13 + c * 50 + ((sx * sy) % 17 + 17) % 17 * 5) % 256;
                    if (val < 0) val += 256;
                    if (y >= 20 && y < 28 && x >= 4 && x < 12) val = 200 - 30 * c;
                    img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c)) =
                        static_cast<std::uint8_t>(val);
                }
            }
        v.frames.push_back(std::move(img));
    }
    return v;
}

}  // namespace cvr::testing
