#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cvr/binary_io.hpp"
#include "cvr/errors.hpp"
#include "cvr/train.hpp"

namespace cvr::train {

namespace {

constexpr Motion kMotions[] = {Motion::translate_down, Motion::translate_up, Motion::oscillate_horizontal,
                               Motion::still, Motion::zoom_in};
constexpr std::size_t kMotionCount = sizeof kMotions / sizeof kMotions[0];

using codec::Image;

std::uint8_t clamp_px(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Smooth background: a coarse random grid bilinearly upsampled.
Image make_background(std::size_t h, std::size_t w, Rng& rng) {
    constexpr std::size_t g = 6;
    double grid[g][g][3];
    for (auto& row : grid)
        for (auto& cell : row)
            for (double& v : cell) v = rng.uniform(40.0, 200.0);
    Image img(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) * (g - 1) / static_cast<double>(h - 1);
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), g - 2);
        const double ay = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) * (g - 1) / static_cast<double>(w - 1);
            const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), g - 2);
            const double ax = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = (1 - ay) * ((1 - ax) * grid[y0][x0][c] + ax * grid[y0][x0 + 1][c]) +
                                 ay * ((1 - ax) * grid[y0 + 1][x0][c] + ax * grid[y0 + 1][x0 + 1][c]);
                img.at(y, x, c) = clamp_px(static_cast<int>(std::lround(v)));
            }
        }
    }
    return img;
}

// High-contrast object texture built from 2x2 cells.
struct Texture {
    std::size_t size = 0;
    std::vector<std::uint8_t> rgb;
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * size + x) * 3 + c]; }
};

Texture make_texture(std::size_t size, Rng& rng) {
    Texture t;
    t.size = size;
    t.rgb.resize(size * size * 3);
    const std::size_t cells = (size + 1) / 2;
    std::vector<std::uint8_t> cell(cells * cells * 3);
    for (auto& v : cell) v = static_cast<std::uint8_t>(rng.below(256));
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < 3; ++c) t.rgb[(y * size + x) * 3 + c] = cell[((y / 2) * cells + x / 2) * 3 + c];
    return t;
}

// Pastes the texture scaled to `side` x `side` at (top, left), clipping at
// the frame border. Nearest-neighbour sampling.
void paste(Image& img, const Texture& tex, long top, long left, std::size_t side) {
    for (std::size_t y = 0; y < side; ++y) {
        const long fy = top + static_cast<long>(y);
        if (fy < 0 || fy >= static_cast<long>(img.height)) continue;
        const std::size_t ty = y * tex.size / side;
        for (std::size_t x = 0; x < side; ++x) {
            const long fx = left + static_cast<long>(x);
            if (fx < 0 || fx >= static_cast<long>(img.width)) continue;
            const std::size_t tx = x * tex.size / side;
            for (std::size_t c = 0; c < 3; ++c) img.at(fy, fx, c) = tex.at(ty, tx, c);
        }
    }
}

// Renders each frame and adds per-pixel noise.
template <class Render>
codec::RawVideo finish_video(const DatasetSpec& spec, std::size_t frames, Rng& rng, Render&& render) {
    codec::RawVideo video;
    video.height = spec.height;
    video.width = spec.width;
    video.frames.reserve(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        Image frame = render(t);
        if (spec.noise > 0) {
            const int n = spec.noise;
            for (auto& px : frame.rgb) px = clamp_px(px + rng.range(-n, n));
        }
        video.frames.push_back(std::move(frame));
    }
    return video;
}

}  // namespace

const char* motion_name(Motion m) {
    switch (m) {
        case Motion::translate_down: return "translate_down";
        case Motion::translate_up: return "translate_up";
        case Motion::oscillate_horizontal: return "oscillate_horizontal";
        case Motion::still: return "still";
        case Motion::zoom_in: return "zoom_in";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// DatasetSpec
// ---------------------------------------------------------------------------

void DatasetSpec::validate() const {
    if (n_classes < 2 || n_classes > kMotionCount) {
        throw ConfigError("n_classes must be in [2, " + std::to_string(kMotionCount) + "]");
    }
    if (videos_per_class == 0) throw ConfigError("videos_per_class must be positive");
    if (height == 0 || width == 0 || height % codec::kMacroblock != 0 || width % codec::kMacroblock != 0) {
        throw GeometryError("frame extents " + std::to_string(height) + "x" + std::to_string(width) +
                            " must be positive multiples of 16");
    }
    if (height < 32 || width < 32) throw ConfigError("frames must be at least 32x32");
    if (frames < 2) throw ConfigError("videos need at least 2 frames");
    if (gop_size == 0) throw ConfigError("gop_size must be positive");
    if (search_range < 1 || search_range > 255) throw ConfigError("search_range must be in [1, 255]");
    if (noise < 0 || noise > 64) throw ConfigError("noise must be in [0, 64]");
    if (!(train_fraction > 0.0) || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0) {
        throw ConfigError("split fractions must satisfy train > 0, val >= 0, train + val < 1");
    }
}

const std::vector<std::string>& DatasetSpec::keys() {
    static const std::vector<std::string> k = {"n_classes", "videos_per_class", "height",         "width",
                                               "frames",    "gop_size",         "search_range",   "noise",
                                               "train_fraction", "val_fraction", "seed"};
    return k;
}

KeyValues DatasetSpec::to_kv() const {
    KeyValues kv;
    kv.set("n_classes", n_classes);
    kv.set("videos_per_class", videos_per_class);
    kv.set("height", height);
    kv.set("width", width);
    kv.set("frames", frames);
    kv.set("gop_size", gop_size);
    kv.set("search_range", search_range);
    kv.set("noise", noise);
    kv.set("train_fraction", train_fraction);
    kv.set("val_fraction", val_fraction);
    kv.set("seed", std::to_string(seed));
    return kv;
}

DatasetSpec DatasetSpec::from_kv(const KeyValues& kv) {
    kv.require_known(keys(), "dataset spec");
    DatasetSpec s;
    s.n_classes = kv.get_size("n_classes", s.n_classes);
    s.videos_per_class = kv.get_size("videos_per_class", s.videos_per_class);
    s.height = kv.get_size("height", s.height);
    s.width = kv.get_size("width", s.width);
    s.frames = kv.get_size("frames", s.frames);
    s.gop_size = kv.get_size("gop_size", s.gop_size);
    s.search_range = static_cast<int>(kv.get_int("search_range", s.search_range));
    s.noise = static_cast<int>(kv.get_int("noise", s.noise));
    s.train_fraction = kv.get_double("train_fraction", s.train_fraction);
    s.val_fraction = kv.get_double("val_fraction", s.val_fraction);
    s.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw UsageError("unknown split '" + std::string(name) + "'; valid: train, val, test");
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) out += e.path + "\t" + std::to_string(e.label) + "\t" + split_name(e.split) + "\n";
    return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
    std::vector<ManifestEntry> out;
    std::size_t line_no = 0, offset = 0;
    while (offset < text.size()) {
        ++line_no;
        const std::size_t nl = text.find('\n', offset);
        std::string_view line = text.substr(offset, nl == std::string_view::npos ? std::string_view::npos : nl - offset);
        const std::size_t line_at = offset;
        offset = nl == std::string_view::npos ? text.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected path<TAB>label<TAB>split",
                             line_at);
        }
        ManifestEntry e;
        e.path = std::string(line.substr(0, t1));
        const std::string label(line.substr(t1 + 1, t2 - t1 - 1));
        try {
            std::size_t used = 0;
            e.label = std::stoi(label, &used);
            if (used != label.size() || e.label < 0) throw std::invalid_argument(label);
        } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad label '" + label + "'", line_at);
        }
        try {
            e.split = parse_split(line.substr(t2 + 1));
        } catch (const UsageError& err) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + err.what(), line_at);
        }
        if (e.path.empty()) throw ParseError("manifest line " + std::to_string(line_no) + ": empty path", line_at);
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

codec::RawVideo render_video(const DatasetSpec& spec, int label, Rng& rng) {
    if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes) {
        throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(spec.n_classes) + ")");
    }
    const Motion motion = kMotions[label];
    const long H = static_cast<long>(spec.height), W = static_cast<long>(spec.width);
    const std::size_t F = spec.frames;
    const Image background = make_background(spec.height, spec.width, rng);
    const std::size_t side = 12 + rng.below(5);  // 12..16
    const Texture tex = make_texture(side, rng);
    const long s = static_cast<long>(side);

    // Per-frame placement (top, left, side).
    std::vector<long> top(F), left(F);
    std::vector<std::size_t> sides(F, side);
    const long max_speed = std::min<long>(2, spec.search_range);
    switch (motion) {
        case Motion::translate_down:
        case Motion::translate_up: {
            // The whole scene pans, so every macroblock moves by the same
            // vector. The scene is a taller canvas viewed through a sliding
            // window.
            const long speed = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(max_speed)));
            const long travel = speed * static_cast<long>(F - 1);
            Image canvas = make_background(spec.height + static_cast<std::size_t>(travel), spec.width, rng);
            const long y0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(H + travel - s + 1)));
            const long x0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(W - s + 1)));
            paste(canvas, tex, y0, x0, side);
            std::vector<long> offset(F);
            for (std::size_t t = 0; t < F; ++t) {
                const long step = speed * static_cast<long>(t);
                offset[t] = motion == Motion::translate_down ? travel - step : step;
            }
            return finish_video(spec, F, rng, [&](std::size_t t) {
                Image frame(spec.height, spec.width);
                const auto row = static_cast<std::size_t>(offset[t]) * spec.width * 3;
                std::copy_n(canvas.rgb.begin() + static_cast<long>(row), frame.rgb.size(), frame.rgb.begin());
                return frame;
            });
        }
        case Motion::oscillate_horizontal: {
            // Period equals the GOP length, so every I-frame shows the same pose.
            const double amp = rng.uniform(4.0, 6.0);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const long margin = static_cast<long>(std::ceil(amp));
            const long x0 = margin + static_cast<long>(rng.below(static_cast<std::uint64_t>(W - s - 2 * margin + 1)));
            const long y0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(H - s + 1)));
            const double period = static_cast<double>(spec.gop_size);
            for (std::size_t t = 0; t < F; ++t) {
                top[t] = y0;
                left[t] = x0 + std::lround(amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase));
            }
            break;
        }
        case Motion::still: {
            const long y0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(H - s + 1)));
            const long x0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(W - s + 1)));
            std::fill(top.begin(), top.end(), y0);
            std::fill(left.begin(), left.end(), x0);
            break;
        }
        case Motion::zoom_in: {
            const double start = 8.0 + static_cast<double>(rng.below(5));
            const double growth = rng.uniform(0.75, 1.0);
            const double cy = rng.uniform(0.4, 0.6) * static_cast<double>(H);
            const double cx = rng.uniform(0.4, 0.6) * static_cast<double>(W);
            for (std::size_t t = 0; t < F; ++t) {
                const auto sz = static_cast<std::size_t>(std::lround(start + growth * static_cast<double>(t)));
                sides[t] = sz;
                top[t] = std::lround(cy - static_cast<double>(sz) / 2.0);
                left[t] = std::lround(cx - static_cast<double>(sz) / 2.0);
            }
            break;
        }
    }

    return finish_video(spec, F, rng, [&](std::size_t t) {
        Image frame = background;
        paste(frame, tex, top[t], left[t], sides[t]);
        return frame;
    });
}

// ---------------------------------------------------------------------------
// Generation and loading
// ---------------------------------------------------------------------------

std::vector<ManifestEntry> generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir / "videos", ec);
    if (ec) throw IoError("cannot create '" + (dir / "videos").string() + "': " + ec.message());

    const std::size_t per = spec.videos_per_class;
    const auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(per)));
    const auto n_val = static_cast<std::size_t>(std::lround(spec.val_fraction * static_cast<double>(per)));
    if (n_train == 0 || n_train + n_val >= per) {
        throw ConfigError("videos_per_class " + std::to_string(per) + " leaves an empty train or test split");
    }

    std::vector<ManifestEntry> manifest;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        for (std::size_t i = 0; i < per; ++i) {
            // One generator per video keeps each file independent of the others.
            Rng rng(spec.seed * 1000003ULL + c * 10007ULL + i);
            const codec::RawVideo video = render_video(spec, static_cast<int>(c), rng);
            const codec::GopStream stream = codec::encode(video, spec.gop_size, spec.search_range);
            char name[64];
            std::snprintf(name, sizeof name, "videos/c%zu_%03zu.gops", c, i);
            codec::write_stream(stream, dir / name);
            const Split split = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
            manifest.push_back({name, static_cast<int>(c), split});
        }
    }
    write_file_bytes(dir / "dataset.cfg", [&] {
        const std::string text = spec.to_kv().str();
        return std::vector<std::uint8_t>(text.begin(), text.end());
    }());
    const std::string m = format_manifest(manifest);
    write_file_bytes(dir / "manifest.tsv", std::vector<std::uint8_t>(m.begin(), m.end()));
    return manifest;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
    const auto bytes = read_file_bytes(dir / "manifest.tsv");
    const auto manifest = parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    if (manifest.empty()) throw PreconditionError("manifest '" + (dir / "manifest.tsv").string() + "' is empty");
    Dataset d;
    for (const auto& e : manifest) {
        Item item;
        item.stream = std::make_unique<codec::GopStream>(codec::read_stream(dir / e.path));
        item.decoded = std::make_unique<codec::DecodedStream>(*item.stream);
        item.label = e.label;
        item.split = e.split;
        item.path = e.path;
        d.n_classes_ = std::max(d.n_classes_, static_cast<std::size_t>(e.label) + 1);
        d.items_.push_back(std::move(item));
    }
    if (std::filesystem::exists(dir / "dataset.cfg")) {
        const DatasetSpec spec = DatasetSpec::from_kv(KeyValues::load(dir / "dataset.cfg"));
        d.n_classes_ = std::max(d.n_classes_, spec.n_classes);
    }
    return d;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].split == split) out.push_back(i);
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> Dataset::rgb_statistics() const {
    std::vector<double> sum(3, 0.0), sq(3, 0.0);
    double count = 0.0;
    for (const auto& item : items_) {
        if (item.split != Split::train) continue;
        for (const auto& gop : item.stream->gops) {
            const auto& px = gop.iframe.rgb;
            for (std::size_t i = 0; i < px.size(); ++i) {
                const double v = px[i] / 255.0;
                sum[i % 3] += v;
                sq[i % 3] += v * v;
            }
            count += static_cast<double>(px.size() / 3);
        }
    }
    if (count == 0.0) throw PreconditionError("training split is empty");
    std::vector<double> mean(3), stddev(3);
    for (std::size_t c = 0; c < 3; ++c) {
        mean[c] = sum[c] / count;
        stddev[c] = std::sqrt(std::max(sq[c] / count - mean[c] * mean[c], 1e-12));
    }
    return {mean, stddev};
}

}  // namespace cvr::train
