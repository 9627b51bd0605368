// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   cvr_acceptance [--only N[,N...]] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "codec_fixture.hpp"
#include "cvr/blocks.hpp"
#include "cvr/codec.hpp"
#include "cvr/errors.hpp"
#include "cvr/grad_suite.hpp"
#include "cvr/model.hpp"
#include "cvr/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cvr;
using namespace cvr::nn;
using namespace cvr::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// 1. Gradients

Outcome gradient_fidelity() {
    GradCheckOptions opts;
    opts.eps = 1e-5;
    opts.seed = 0;
    const auto t0 = Clock::now();
    const auto reports = run_gradient_suite(opts);
    const double seconds = since(t0);
    bool ok = seconds < 120.0;
    std::ostringstream d;
    for (const auto& r : reports) {
        ok = ok && r.result.max_rel_error < 1e-4;
        std::cout << "  " << r.block << " max_rel_error=" << r.result.max_rel_error
                  << " coords=" << r.result.coords_checked << " worst=" << r.result.worst_path << '['
                  << r.result.worst_index << "]\n";
    }
    d << reports.size() << " blocks, tolerance 1e-4, " << fmt(seconds, 1) << " s";
    return {ok && reports.size() == 7, d.str()};
}

// ---------------------------------------------------------------------------
// 2 and 3. Codec

// A drifting texture with a few moving rectangles and noise; some videos add
// abrupt cuts so the block search meets unpredictable content.
codec::RawVideo random_video(Rng& rng, std::size_t H, std::size_t W, std::size_t T) {
    codec::RawVideo v;
    v.height = H;
    v.width = W;
    const int vy = rng.range(-3, 3), vx = rng.range(-3, 3);
    const int fy = rng.range(1, 9), fx = rng.range(1, 9);
    const int noise = rng.range(0, 12);
    const bool cuts = rng.below(4) == 0;
    int phase = rng.range(0, 255);
    struct Box {
        int y, x, h, w, dy, dx;
        std::uint8_t color[3];
    };
    std::vector<Box> boxes(rng.below(4));
    for (auto& b : boxes) {
        b = {rng.range(0, static_cast<int>(H) - 1), rng.range(0, static_cast<int>(W) - 1), rng.range(4, 20),
             rng.range(4, 20), rng.range(-5, 5), rng.range(-5, 5), {}};
        for (auto& c : b.color) c = static_cast<std::uint8_t>(rng.below(256));
    }
    for (std::size_t t = 0; t < T; ++t) {
        if (cuts && rng.below(6) == 0) phase = rng.range(0, 255);
        codec::Image img(H, W);
        const int ti = static_cast<int>(t);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const int sy = static_cast<int>(y) - vy * ti, sx = static_cast<int>(x) - vx * ti;
                for (std::size_t c = 0; c < 3; ++c) {
                    int val = phase + sy * fy + sx * fx + static_cast<int>(c) * 40 + ((sy * sx) & 31);
                    if (noise > 0) val += rng.range(-noise, noise);
                    img.at(y, x, c) = static_cast<std::uint8_t>(((val % 256) + 256) % 256);
                }
            }
        for (const auto& b : boxes) {
            const int y0 = b.y + b.dy * ti, x0 = b.x + b.dx * ti;
            for (int y = std::max(0, y0); y < std::min(static_cast<int>(H), y0 + b.h); ++y)
                for (int x = std::max(0, x0); x < std::min(static_cast<int>(W), x0 + b.w); ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = b.color[c];
        }
        v.frames.push_back(std::move(img));
    }
    return v;
}

Outcome codec_losslessness() {
    Rng rng(2024);
    std::size_t failures = 0, nonzero_mv = 0;
    for (int i = 0; i < 100; ++i) {
        const codec::RawVideo v = random_video(rng, 64, 64, 24);
        const codec::GopStream s = codec::encode(v, 12, 4);
        for (const auto& g : s.gops)
            for (const auto& p : g.pframes)
                for (const auto& mv : p.mv) nonzero_mv += (mv.dy != 0 || mv.dx != 0);
        const auto bytes = codec::serialize_stream(s);
        const codec::GopStream back = codec::parse_stream(bytes);
        if (!(back == s) || codec::decode_sequential(back, v.fps).frames != v.frames) ++failures;
    }
    return {failures == 0 && nonzero_mv > 0, "100 videos 64x64x24 gop 12 through the container, failures=" +
                                                  std::to_string(failures) +
                                                  ", nonzero macroblock vectors=" + std::to_string(nonzero_mv)};
}

Outcome accumulation_equivalence() {
    Rng rng(77);
    std::size_t gops = 0, frames = 0, failures = 0;
    for (int i = 0; i < 60; ++i) {
        const std::size_t H = 16 * (1 + rng.below(4)), W = 16 * (1 + rng.below(4));
        const codec::RawVideo v = random_video(rng, H, W, 10 + rng.below(15));
        const std::size_t gop = 2 + rng.below(11);
        const codec::GopStream s = codec::encode(v, gop, static_cast<int>(1 + rng.below(5)));
        const codec::RawVideo seq = codec::decode_sequential(s);
        std::size_t base = 0;
        for (const auto& g : s.gops) {
            const codec::AccumulatedFields f = codec::accumulate(g, H, W);
            for (std::size_t t = 0; t < g.frame_count(); ++t, ++frames)
                if (!(codec::reconstruct_from_accumulated(g, f, t) == seq.frames[base + t])) ++failures;
            base += g.frame_count();
            ++gops;
        }
    }
    return {failures == 0 && gops >= 100, std::to_string(gops) + " GOPs, " + std::to_string(frames) +
                                              " frames, failures=" + std::to_string(failures)};
}

// ---------------------------------------------------------------------------
// 4 to 6. Blocks

Outcome dm_attenuation() {
    Rng rng(4);
    std::size_t elements = 0, violations = 0;
    for (int i = 0; i < 1000; ++i) {
        ParamStore store;
        const std::size_t C = 1 + rng.below(4);
        const DenoisingModule dm(store, "dm", DmConfig{C, 2 + rng.below(3)}, rng);
        randomize(store, rng, -1.5, 1.5);
        const Shape s(1 + rng.below(2), C, 1 + rng.below(4), 1 + rng.below(12), 1 + rng.below(12));
        std::vector<double> x(s.numel());
        for (double& v : x) v = rng.below(8) == 0 ? 0.0 : rng.uniform(-4.0, 4.0);
        const Tensor y = dm.forward(Tensor(s, x));
        for (std::size_t k = 0; k < x.size(); ++k, ++elements) {
            const double a = std::abs(y.data()[k]), b = std::abs(x[k]);
            if (x[k] == 0.0 ? a != 0.0 : !(a < b)) ++violations;
        }
    }
    return {violations == 0,
            "1000 inputs, " + std::to_string(elements) + " elements, violations=" + std::to_string(violations)};
}

Outcome oracle_equivalence() {
    double dm_err = 0.0, smc_err = 0.0, cma_err = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(100 + seed);
        for (std::size_t i = 2; i <= 4; ++i) {
            ParamStore store;
            const DenoisingModule dm(store, "dm", DmConfig{3, i}, rng);
            randomize(store, rng, -1, 1);
            const Tensor x = random_tensor(Shape(2, 3, 3, 11, 9), rng, -2, 2);
            const Grid want = dm_oracle(Grid(x), store.get("dm.conv.weight"), store.get("dm.conv.bias"),
                                        std::size_t{1} << (i - 1));
            dm_err = std::max(dm_err, max_abs_diff(dm.forward(x), want.v));
        }
        {
            ParamStore store;
            const SelectiveMotionComplement smc(store, "smc", SmcConfig{12, 4, 3}, rng);
            randomize(store, rng, -1, 1);
            const Tensor fi = random_tensor(Shape(2, 12, 3, 4, 5), rng);
            const Tensor fp = random_tensor(Shape(2, 12, 3, 4, 5), rng);
            smc_err = std::max(smc_err, max_abs_diff(smc.forward(fi, fp), smc_oracle(Grid(fi), Grid(fp), store, "smc").v));
        }
        {
            ParamStore store;
            const CrossModalityAugment cma(store, "cma", CmaConfig{6, 3}, rng);
            randomize(store, rng, -1, 1);
            const Tensor fi = random_tensor(Shape(2, 6, 2, 3, 2), rng);
            const Tensor fp = random_tensor(Shape(2, 6, 2, 3, 2), rng);
            cma_err = std::max(cma_err,
                               max_abs_diff(cma.forward(fi, fp), cma_oracle(Grid(fi), Grid(fp), store, "cma", 3).v));
        }
    }
    const bool ok = dm_err < 1e-10 && smc_err < 1e-10 && cma_err < 1e-10;
    std::ostringstream d;
    d << "max abs error dm=" << dm_err << " smc=" << smc_err << " cma=" << cma_err << " (tolerance 1e-10)";
    return {ok, d.str()};
}

Outcome parameter_economy() {
    bool ok = true;
    std::ostringstream d;
    for (std::size_t w : {32u, 64u, 128u}) {
        ParamStore ms, bs;
        Rng rng(6);
        MultiScaleBlock(ms, "m", MsbConfig{w, w, w}, rng);
        BottleneckBlock(bs, "b", BottleneckConfig{w, w, w}, rng);
        const std::size_t m = msb_param_oracle(w, w, w, true, false, false);
        const std::size_t b = bottleneck_param_oracle(w, w, w, false);
        ok = ok && ms.parameter_count() == m && bs.parameter_count() == b && m < b;
        d << "w=" << w << " msb=" << m << " bottleneck=" << b << "; ";
    }
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 7 to 9. Toy training

struct Run {
    std::string variant;
    std::uint64_t seed = 0;
    double top1 = 0.0;
    double top1_3clip = 0.0;
    std::vector<double> per_clip;
    double seconds = 0.0;
};

struct ToyResults {
    std::vector<Run> runs;
    double seconds_c7 = 0.0;  // rgb-only, mvr-only, full
    std::string error;

    std::vector<const Run*> of(const std::string& v) const {
        std::vector<const Run*> out;
        for (const auto& r : runs)
            if (r.variant == v) out.push_back(&r);
        return out;
    }
    double mean(const std::string& v) const {
        const auto rs = of(v);
        double s = 0.0;
        for (const Run* r : rs) s += r->top1;
        return rs.empty() ? -1.0 : s / static_cast<double>(rs.size());
    }
};

ToyResults train_toy(const fs::path& workdir, const std::vector<std::string>& variants) {
    ToyResults out;
    const fs::path dir = workdir / "toy_dataset";
    std::error_code ec;
    fs::remove_all(dir, ec);
    const auto tg = Clock::now();
    train::generate_dataset(train::DatasetSpec{}, dir);
    const train::Dataset data = train::Dataset::load(dir);
    const double gen_seconds = since(tg);
    std::cout << "  dataset: " << data.items().size() << " videos, " << data.n_classes() << " classes, "
              << data.indices(train::Split::test).size() << " test, generated in " << fmt(gen_seconds, 1) << " s\n";
    out.seconds_c7 = gen_seconds;

    const train::TrainConfig tc = train::TrainConfig::toy();
    for (const auto& v : variants) {
        for (std::uint64_t seed : {0u, 1u, 2u}) {
            const auto t0 = Clock::now();
            ModelConfig mc = apply_variant(ModelConfig{}, v);
            mc.seed = seed;
            mc.num_classes = data.n_classes();
            TwoStreamModel model(mc);
            train::TrainConfig c = tc;
            c.seed = seed;
            train::train(model, data, c);
            train::EvalOptions eo;
            eo.n_frames = c.n_frames;
            eo.crop = c.crop;
            const train::EvalResult one = train::evaluate(model, data, train::Split::test, eo);
            eo.n_clips = 3;
            const train::EvalResult three = train::evaluate(model, data, train::Split::test, eo);
            Run r{v, seed, one.top1, three.top1, three.per_clip_top1, since(t0)};
            std::cout << "  variant=" << v << " seed=" << seed << " top1=" << fmt(r.top1, 3)
                      << " top1_3clip=" << fmt(r.top1_3clip, 3) << " clips=";
            for (std::size_t i = 0; i < r.per_clip.size(); ++i) std::cout << (i ? "/" : "") << fmt(r.per_clip[i], 3);
            std::cout << " seconds=" << fmt(r.seconds, 1) << '\n' << std::flush;
            if (v == "rgb-only" || v == "mvr-only" || v == "full") out.seconds_c7 += r.seconds;
            out.runs.push_back(std::move(r));
        }
    }
    return out;
}

std::string seeds_of(const ToyResults& t, const std::string& v) {
    std::string s;
    for (const Run* r : t.of(v)) s += (s.empty() ? "" : "/") + fmt(r->top1, 3);
    return s;
}

Outcome modality_ablation(const ToyResults& t) {
    const double full = t.mean("full"), rgb = t.mean("rgb-only"), mvr = t.mean("mvr-only");
    bool ok = full >= 0.80 && full >= std::max(rgb, mvr) && mvr > 0.5 && t.seconds_c7 <= 1800.0;
    for (const Run* r : t.of("full")) ok = ok && r->top1 >= 0.80;
    std::ostringstream d;
    d << "3-seed mean top1 full=" << fmt(full, 3) << " (" << seeds_of(t, "full") << ") rgb-only=" << fmt(rgb, 3)
      << " (" << seeds_of(t, "rgb-only") << ") mvr-only=" << fmt(mvr, 3) << " (" << seeds_of(t, "mvr-only")
      << "), " << fmt(t.seconds_c7 / 60.0, 1) << " min";
    return {ok, d.str()};
}

Outcome interaction_ablation(const ToyResults& t) {
    std::cout << "  variant   mean_top1  per_seed\n";
    for (const char* v : {"b2", "b2+add", "b2+smc", "b2+cma", "full"}) {
        char line[128];
        std::snprintf(line, sizeof line, "  %-9s %9.3f  %s\n", v, t.mean(v), seeds_of(t, v).c_str());
        std::cout << line;
    }
    const double full = t.mean("full"), b2 = t.mean("b2");
    return {full >= b2, "3-seed mean top1 full=" + fmt(full, 3) + " b2=" + fmt(b2, 3)};
}

Outcome multi_clip(const ToyResults& t) {
    bool ok = !t.runs.empty();
    double min_margin = INFINITY;
    for (const auto& r : t.runs) {
        if (r.per_clip.size() != 3) {
            ok = false;
            continue;
        }
        const double worst = *std::min_element(r.per_clip.begin(), r.per_clip.end());
        min_margin = std::min(min_margin, r.top1_3clip - worst);
        ok = ok && r.top1_3clip >= worst;
    }
    return {ok, std::to_string(t.runs.size()) + " trained models, min(3-clip minus worst clip)=" + fmt(min_margin, 3)};
}

// ---------------------------------------------------------------------------
// 10. Container

Outcome container_stability() {
    const fs::path path = fs::path(CVR_FIXTURE_DIR) / "golden_2gop.gops";
    std::vector<std::uint8_t> bytes;
    {
        std::FILE* f = std::fopen(path.string().c_str(), "rb");
        if (!f) return {false, "cannot open " + path.string()};
        int ch;
        while ((ch = std::fgetc(f)) != EOF) bytes.push_back(static_cast<std::uint8_t>(ch));
        std::fclose(f);
    }
    const codec::StreamHeader h = codec::parse_stream_header(bytes);
    const codec::GopStream s = codec::parse_stream(bytes);
    bool ok = h.version == 1 && h.gop_size == 12 && h.search_range == 4 && h.height == 32 && h.width == 32 &&
              h.gop_count == 2 && s.frame_count() == 14 && s == codec::encode(golden_video(), 12, 4);
    std::size_t parse_errors = 0, other = 0;
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        try {
            codec::parse_stream(std::span<const std::uint8_t>(bytes).first(n));
            ++other;
        } catch (const ParseError&) {
            ++parse_errors;
        } catch (...) {
            ++other;
        }
    }
    ok = ok && other == 0;
    std::ostringstream d;
    d << "header version=" << h.version << " gop=" << h.gop_size << " sr=" << h.search_range << ' ' << h.height << 'x'
      << h.width << " gops=" << h.gop_count << " frames=" << s.frame_count() << "; " << parse_errors << '/'
      << bytes.size() << " truncations raised ParseError";
    return {ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path workdir = CVR_ACCEPTANCE_WORKDIR;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
        } else if (a == "--workdir" && i + 1 < argc) {
            workdir = argv[++i];
        } else {
            std::cerr << "usage: cvr_acceptance [--only N[,N...]] [--workdir DIR]\n";
            return 1;
        }
    }
    auto wanted = [&](int n) { return only.empty() || only.count(n) != 0; };

    std::map<int, Outcome> results;
    auto run = [&](int n, const char* name, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        std::cout << "[" << n << "] " << name << '\n' << std::flush;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        results[n] = o;
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail
                  << '\n'
                  << std::flush;
    };

    run(1, "gradient fidelity", gradient_fidelity);
    run(2, "codec losslessness", codec_losslessness);
    run(3, "accumulation equivalence", accumulation_equivalence);
    run(4, "DM attenuation", dm_attenuation);
    run(5, "oracle equivalence", oracle_equivalence);
    run(6, "block parameter economy", parameter_economy);

    if (wanted(7) || wanted(8) || wanted(9)) {
        std::vector<std::string> variants;
        if (wanted(7) || wanted(9)) variants = {"rgb-only", "mvr-only", "full"};
        if (wanted(8) || wanted(9))
            for (const char* v : {"full", "b2", "b2+add", "b2+smc", "b2+cma"})
                if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
        std::cout << "[7-9] toy training: " << variants.size() << " variants x 3 seeds\n" << std::flush;
        ToyResults toy;
        try {
            fs::create_directories(workdir);
            toy = train_toy(workdir, variants);
        } catch (const std::exception& e) {
            toy.error = e.what();
        }
        auto guarded = [&](auto f) {
            return [&toy, f]() -> Outcome {
                if (!toy.error.empty()) return {false, "training failed: " + toy.error};
                return f(toy);
            };
        };
        run(7, "modality ablation", guarded(modality_ablation));
        run(8, "interaction ablation", guarded(interaction_ablation));
        run(9, "3-clip testing", guarded(multi_clip));
    }
    run(10, "container stability", container_stability);

    std::size_t failed = 0;
    std::cout << "\nsummary\n";
    for (const auto& [n, o] : results) {
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << '\n';
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
