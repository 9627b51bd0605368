#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "cvr/binary_io.hpp"
#include "cvr/errors.hpp"
#include "cvr/grad_suite.hpp"
#include "cvr/kv_text.hpp"
#include "cvr/model.hpp"
#include "cvr/serialize.hpp"
#include "cvr/train.hpp"

namespace cvr::cli {

namespace {

namespace fs = std::filesystem;
using train::DatasetSpec;
using train::TrainConfig;

std::size_t default_threads() {
    const char* env = std::getenv("CVR_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 256) {
        throw UsageError("CVR_THREADS must be an integer in [1, 256], got '" + std::string(env) + "'");
    }
    return static_cast<std::size_t>(v);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
void override_with(T& field, const std::optional<T>& flag) {
    if (flag) field = *flag;
}

void put(std::ostream& out, const std::string& key, const std::string& value) { out << key << '=' << value << '\n'; }
void put(std::ostream& out, const std::string& key, double value) { put(out, key, format_double(value)); }
void put(std::ostream& out, const std::string& key, std::size_t value) { put(out, key, std::to_string(value)); }

// ---------------------------------------------------------------------------
// Commands. Each one is registered with CLI11 and runs after parsing.
// ---------------------------------------------------------------------------

struct EncodeArgs {
    std::string input, output;
    std::size_t gop_size = codec::kDefaultGopSize;
    int search_range = codec::kDefaultSearchRange;
};

int do_encode(const EncodeArgs& a, std::ostream& out) {
    const auto bytes = read_file_bytes(a.input);
    const codec::RawVideo video = codec::parse_raw_video(bytes);
    const codec::GopStream stream = codec::encode(video, a.gop_size, a.search_range);
    const auto encoded = codec::serialize_stream(stream);
    write_file_bytes(a.output, encoded);
    put(out, "frames", stream.frame_count());
    put(out, "gops", stream.gops.size());
    put(out, "bytes", encoded.size());
    return kOk;
}

struct DecodeArgs {
    std::string input, output;
    double fps = 25.0;
};

int do_decode(const DecodeArgs& a, std::ostream& out) {
    const codec::GopStream stream = codec::read_stream(a.input);
    const codec::RawVideo video = codec::decode_sequential(stream, a.fps);
    const auto bytes = codec::serialize_raw_video(video);
    write_file_bytes(a.output, bytes);
    put(out, "frames", video.frames.size());
    put(out, "bytes", bytes.size());
    return kOk;
}

struct ExtractArgs {
    std::string input, output_dir;
    std::string dtype = "f64";
};

// Writes mv.mten (1, 2, T, H, W) and residual.mten (1, 3, T, H, W) with the
// accumulated integer fields; I-frame slots are zero.
int do_extract(const ExtractArgs& a, std::ostream& out) {
    if (a.dtype != "f64" && a.dtype != "f32") throw UsageError("--dtype must be f64 or f32");
    const DType dtype = a.dtype == "f32" ? DType::f32 : DType::f64;
    const codec::GopStream stream = codec::read_stream(a.input);
    const codec::DecodedStream decoded(stream);
    const std::size_t T = stream.frame_count(), H = stream.height, W = stream.width, plane = H * W;
    std::vector<double> mv(2 * T * plane, 0.0), res(3 * T * plane, 0.0);
    std::size_t t = 0;
    for (const auto& fields : decoded.fields) {
        ++t;  // I-frame
        for (const auto& f : fields.frames) {
            for (std::size_t p = 0; p < plane; ++p) {
                for (std::size_t c = 0; c < 2; ++c) mv[(c * T + t) * plane + p] = f.mv[p * 2 + c];
                for (std::size_t c = 0; c < 3; ++c) res[(c * T + t) * plane + p] = f.residual[p * 3 + c];
            }
            ++t;
        }
    }
    std::error_code ec;
    fs::create_directories(a.output_dir, ec);
    if (ec) throw IoError("cannot create '" + a.output_dir + "': " + ec.message());
    const fs::path dir(a.output_dir);
    save_tensor(dir / "mv.mten", Tensor(Shape(1, 2, T, H, W), std::move(mv)), dtype);
    save_tensor(dir / "residual.mten", Tensor(Shape(1, 3, T, H, W), std::move(res)), dtype);
    put(out, "frames", T);
    put(out, "height", H);
    put(out, "width", W);
    put(out, "mv", (dir / "mv.mten").string());
    put(out, "residual", (dir / "residual.mten").string());
    return kOk;
}

struct DatasetArgs {
    std::string output, config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> classes, videos_per_class, height, width, frames, gop_size;
    std::optional<int> search_range, noise;
};

int do_dataset_gen(const DatasetArgs& a, std::ostream& out) {
    DatasetSpec spec = a.config.empty() ? DatasetSpec{} : DatasetSpec::from_kv(KeyValues::load(a.config));
    override_with(spec.seed, a.seed);
    override_with(spec.n_classes, a.classes);
    override_with(spec.videos_per_class, a.videos_per_class);
    override_with(spec.height, a.height);
    override_with(spec.width, a.width);
    override_with(spec.frames, a.frames);
    override_with(spec.gop_size, a.gop_size);
    override_with(spec.search_range, a.search_range);
    override_with(spec.noise, a.noise);
    const auto manifest = train::generate_dataset(spec, a.output);
    std::map<std::string, std::size_t> counts;
    for (const auto& e : manifest) ++counts[train::split_name(e.split)];
    put(out, "videos", manifest.size());
    for (const char* s : {"train", "val", "test"}) put(out, s, counts[s]);
    put(out, "directory", a.output);
    return kOk;
}

struct TrainArgs {
    std::string data, output, config, model_config, log;
    std::string variant = "full";
    std::optional<double> lr;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<std::uint64_t> seed;
};

TrainConfig resolve_train_config(const std::string& config, const std::optional<double>& lr,
                                 const std::optional<std::size_t>& epochs,
                                 const std::optional<std::size_t>& batch_size,
                                 const std::optional<std::uint64_t>& seed) {
    TrainConfig tc = TrainConfig::toy();
    if (!config.empty()) tc = TrainConfig::from_kv(KeyValues::load(config), tc);
    override_with(tc.lr, lr);
    override_with(tc.batch_size, batch_size);
    override_with(tc.seed, seed);
    if (epochs) {
        // Keep only decay points that still fall inside the shortened run.
        tc.epochs = *epochs;
        std::erase_if(tc.decay_epochs, [&](std::size_t d) { return d >= tc.epochs; });
    }
    tc.validate();
    return tc;
}

int do_train(const TrainArgs& a, std::ostream& out) {
    const TrainConfig tc = resolve_train_config(a.config, a.lr, a.epochs, a.batch_size, a.seed);
    const train::Dataset data = train::Dataset::load(a.data);
    ModelConfig base = a.model_config.empty() ? ModelConfig{} : ModelConfig::from_kv(KeyValues::load(a.model_config));
    base.num_classes = data.n_classes();
    ModelConfig mc = apply_variant(base, a.variant);
    mc.seed = tc.seed;
    TwoStreamModel model(mc);

    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log, std::ios::app);
        if (!log_file) throw IoError("cannot open log file '" + a.log + "'");
    }
    struct Tee : std::streambuf {
        std::streambuf* a;
        std::streambuf* b;
        int overflow(int c) override {
            if (c == EOF) return 0;
            if (a->sputc(static_cast<char>(c)) == EOF) return EOF;
            if (b && b->sputc(static_cast<char>(c)) == EOF) return EOF;
            return c;
        }
        int sync() override { return a->pubsync() | (b ? b->pubsync() : 0); }
    } tee;
    tee.a = out.rdbuf();
    tee.b = log_file.is_open() ? log_file.rdbuf() : nullptr;
    std::ostream log(&tee);

    const auto result = train::train(model, data, tc, &log);
    model.save(a.output);
    put(out, "variant", a.variant);
    put(out, "params", model.parameter_count());
    put(out, "final_loss", result.epochs.back().train_loss);
    put(out, "checkpoint", a.output);
    return kOk;
}

struct EvalArgs {
    std::string data, model;
    std::string split = "test";
    std::size_t clips = 1, frames = 8, crop = 48;
    std::optional<std::size_t> threads;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
    const train::Split split = train::parse_split(a.split);
    const TwoStreamModel model = TwoStreamModel::load(a.model);
    const train::Dataset data = train::Dataset::load(a.data);
    train::EvalOptions eo;
    eo.n_clips = a.clips;
    eo.n_frames = a.frames;
    eo.crop = a.crop;
    eo.threads = a.threads.value_or(default_threads());
    const auto r = train::evaluate(model, data, split, eo);
    put(out, "split", a.split);
    put(out, "videos", r.count);
    put(out, "clips", a.clips);
    put(out, "top1", r.top1);
    if (r.top1_rgb >= 0.0) put(out, "top1_rgb", r.top1_rgb);
    if (r.top1_mvr >= 0.0) put(out, "top1_mvr", r.top1_mvr);
    if (r.top1_fused_head >= 0.0) put(out, "top1_fused_head", r.top1_fused_head);
    for (std::size_t i = 0; i < r.per_clip_top1.size(); ++i) {
        put(out, "clip" + std::to_string(i) + "_top1", r.per_clip_top1[i]);
    }
    return kOk;
}

struct AblateArgs {
    std::string data, config, model_config, output;
    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds{0};
    std::optional<double> lr;
    std::optional<std::size_t> epochs, threads;
};

int do_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    train::AblationOptions o;
    o.train = resolve_train_config(a.config, a.lr, a.epochs, std::nullopt, std::nullopt);
    o.variants = a.variants.empty() ? variant_names() : a.variants;
    for (const auto& v : o.variants) apply_variant(ModelConfig{}, v);  // reject typos before loading data
    o.seeds = a.seeds;
    o.threads = a.threads.value_or(default_threads());
    const train::Dataset data = train::Dataset::load(a.data);
    o.base = a.model_config.empty() ? ModelConfig{} : ModelConfig::from_kv(KeyValues::load(a.model_config));
    o.base.num_classes = data.n_classes();
    const auto rows = train::run_ablation(data, o, &err);
    const std::string csv = train::ablation_csv(rows);
    if (a.output.empty()) {
        out << csv;
    } else {
        write_file_bytes(a.output, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
        put(out, "rows", rows.size());
        put(out, "table", a.output);
    }
    return kOk;
}

struct GradCheckArgs {
    double eps = 1e-5;
    double tolerance = 1e-4;
    std::size_t coords = 24;
    std::uint64_t seed = 0;
};

int do_grad_check(const GradCheckArgs& a, std::ostream& out) {
    if (!(a.eps > 0.0)) throw UsageError("--eps must be positive");
    GradCheckOptions opts;
    opts.eps = a.eps;
    opts.max_coords_per_tensor = a.coords;
    opts.seed = a.seed;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    for (const auto& r : nn::run_gradient_suite(opts)) {
        const bool pass = r.result.max_rel_error < a.tolerance;
        ok &= pass;
        out << "block=" << r.block << " max_rel_error=" << format_double(r.result.max_rel_error)
            << " coords=" << r.result.coords_checked << " worst=" << r.result.worst_path << '['
            << r.result.worst_index << "] status=" << (pass ? "pass" : "fail") << '\n';
    }
    put(out, "tolerance", a.tolerance);
    put(out, "seconds", std::round(seconds_since(t0) * 1000.0) / 1000.0);
    put(out, "status", ok ? "pass" : "fail");
    return ok ? kOk : kCheckFailed;
}

struct BenchArgs {
    std::size_t height = 64, width = 64, frames = 24, iterations = 1;
    std::uint64_t seed = 0;
};

int do_bench(const BenchArgs& a, std::ostream& out) {
    if (a.iterations == 0) throw UsageError("--iterations must be positive");
    DatasetSpec spec;
    spec.height = a.height;
    spec.width = a.width;
    spec.frames = a.frames;
    spec.validate();
    Rng rng(a.seed);
    const codec::RawVideo video = train::render_video(spec, 0, rng);

    auto t0 = std::chrono::steady_clock::now();
    codec::GopStream stream;
    for (std::size_t i = 0; i < a.iterations; ++i) stream = codec::encode(video, spec.gop_size, spec.search_range);
    const double encode_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < a.iterations; ++i) {
        const codec::DecodedStream decoded(stream);
        nonzero = 0;
        for (const auto& f : decoded.fields)
            for (const auto& fr : f.frames)
                for (auto v : fr.mv) nonzero += v != 0;
    }
    const double extract_s = seconds_since(t0);

    ModelConfig mc;
    const TwoStreamModel model(mc);
    codec::ClipOptions co;
    co.crop_h = co.crop_w = std::min<std::size_t>(48, std::min(a.height, a.width));
    const codec::ClipSample clip = codec::sample_clip(stream, co, 0);
    t0 = std::chrono::steady_clock::now();
    {
        NoGradGuard guard;
        for (std::size_t i = 0; i < a.iterations; ++i) model.forward(clip.rgb, clip.mvr);
    }
    const double forward_s = seconds_since(t0);

    const double frames_done = static_cast<double>(a.frames * a.iterations);
    put(out, "height", a.height);
    put(out, "width", a.width);
    put(out, "frames", a.frames);
    put(out, "iterations", a.iterations);
    put(out, "stream_bytes", codec::serialize_stream(stream).size());
    put(out, "nonzero_mv_components", nonzero);
    put(out, "model_params", model.parameter_count());
    put(out, "clip_frames", co.n_frames);
    put(out, "encode_fps", frames_done / encode_s);
    put(out, "extract_fps", frames_done / extract_s);
    put(out, "forward_fps", static_cast<double>(co.n_frames * a.iterations) / forward_s);
    return kOk;
}

struct InspectArgs {
    std::string input;
};

std::string param_group(const std::string& path) {
    std::string head = path.substr(0, path.find('.'));
    while (!head.empty() && std::isdigit(static_cast<unsigned char>(head.back()))) head.pop_back();
    return head;
}

int do_inspect(const InspectArgs& a, std::ostream& out) {
    const auto bytes = read_file_bytes(a.input);
    const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (view.starts_with("GOPS")) {
        const auto h = codec::parse_stream_header(bytes);
        const auto stream = codec::parse_stream(bytes);
        put(out, "format", "gops");
        put(out, "version", static_cast<std::size_t>(h.version));
        put(out, "gop_size", static_cast<std::size_t>(h.gop_size));
        put(out, "search_range", static_cast<std::size_t>(h.search_range));
        put(out, "height", static_cast<std::size_t>(h.height));
        put(out, "width", static_cast<std::size_t>(h.width));
        put(out, "gop_count", static_cast<std::size_t>(h.gop_count));
        put(out, "frames", stream.frame_count());
    } else if (view.starts_with("RAWV")) {
        const auto v = codec::parse_raw_video(bytes);
        put(out, "format", "rawv");
        put(out, "frames", v.frames.size());
        put(out, "height", v.height);
        put(out, "width", v.width);
        put(out, "fps", v.fps);
    } else if (view.starts_with("MTEN")) {
        ByteReader in(bytes);
        const Tensor t = read_tensor(in);
        put(out, "format", "mten");
        put(out, "shape", t.shape().str());
        put(out, "dtype", bytes.size() > 48 && bytes[48] == 1 ? "f32" : "f64");
        put(out, "values", t.numel());
    } else if (view.starts_with("CVRCKPT")) {
        const TwoStreamModel model = TwoStreamModel::deserialize(bytes);
        put(out, "format", "checkpoint");
        out << model.config().to_kv().str();
        put(out, "params_trainable", model.parameter_count());
        put(out, "params_total", model.params().parameter_count(false));
        std::map<std::string, std::size_t> groups;
        for (const auto& [path, e] : model.params())
            if (e.trainable) groups[param_group(path)] += e.tensor.numel();
        for (const auto& [g, n] : groups) put(out, "params." + g, n);
    } else {
        throw ParseError("unrecognized file format (expected GOPS, RAWV, MTEN or CVRCKPT magic)", 0);
    }
    return kOk;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage:
        case ErrorKind::config: return kUsage;
        default: return kDataError;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Compressed-video action recognition toolkit", "cvr"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit");
    app.set_help_all_flag("--help-all", "Show help for every subcommand");
    int code = kOk;
    std::function<int()> action;

    EncodeArgs enc;
    auto* encode = app.add_subcommand("encode", "Encode a raw video (RAWV) into a GOP stream (GOPS)");
    encode->add_option("--input", enc.input, "Raw video file")->required();
    encode->add_option("--output", enc.output, "Stream file to write")->required();
    encode->add_option("--gop-size", enc.gop_size, "Frames per group of pictures")->capture_default_str()
        ->check(CLI::Range(1, 65535));
    encode->add_option("--search-range", enc.search_range, "Motion search range in pixels")->capture_default_str()
        ->check(CLI::Range(1, 255));
    encode->callback([&] { action = [&] { return do_encode(enc, out); }; });

    DecodeArgs dec;
    auto* decode = app.add_subcommand("decode", "Decode a GOP stream back to a raw video");
    decode->add_option("--input", dec.input, "Stream file")->required();
    decode->add_option("--output", dec.output, "Raw video file to write")->required();
    decode->add_option("--fps", dec.fps, "Frame rate recorded in the output")->capture_default_str();
    decode->callback([&] { action = [&] { return do_decode(dec, out); }; });

    ExtractArgs ext;
    auto* extract = app.add_subcommand("extract", "Write accumulated motion-vector and residual tensors");
    extract->add_option("--input", ext.input, "Stream file")->required();
    extract->add_option("--output-dir", ext.output_dir, "Directory for mv.mten and residual.mten")->required();
    extract->add_option("--dtype", ext.dtype, "Stored value type: f64 or f32")->capture_default_str();
    extract->callback([&] { action = [&] { return do_extract(ext, out); }; });

    DatasetArgs ds;
    auto* dataset = app.add_subcommand("dataset-gen", "Generate the synthetic motion-class dataset");
    dataset->add_option("--output", ds.output, "Dataset directory")->required();
    dataset->add_option("--config", ds.config, "Dataset config file (key=value)");
    dataset->add_option("--seed", ds.seed);
    dataset->add_option("--classes", ds.classes, "Number of motion classes (2 to 5)");
    dataset->add_option("--videos-per-class", ds.videos_per_class);
    dataset->add_option("--height", ds.height);
    dataset->add_option("--width", ds.width);
    dataset->add_option("--frames", ds.frames);
    dataset->add_option("--gop-size", ds.gop_size);
    dataset->add_option("--search-range", ds.search_range);
    dataset->add_option("--noise", ds.noise, "Per-pixel noise amplitude");
    dataset->callback([&] { action = [&] { return do_dataset_gen(ds, out); }; });

    TrainArgs tr;
    auto* trainc = app.add_subcommand("train", "Train one model variant and save a checkpoint");
    trainc->add_option("--data", tr.data, "Dataset directory")->required();
    trainc->add_option("--output", tr.output, "Checkpoint file to write")->required();
    trainc->add_option("--variant", tr.variant, "Model variant")->capture_default_str();
    trainc->add_option("--config", tr.config, "Training config file (key=value)");
    trainc->add_option("--model-config", tr.model_config, "Model config file (key=value)");
    trainc->add_option("--log", tr.log, "Append per-epoch records to this file");
    trainc->add_option("--lr", tr.lr);
    trainc->add_option("--epochs", tr.epochs);
    trainc->add_option("--batch-size", tr.batch_size);
    trainc->add_option("--seed", tr.seed);
    trainc->callback([&] { action = [&] { return do_train(tr, out); }; });

    EvalArgs ev;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    evalc->add_option("--data", ev.data, "Dataset directory")->required();
    evalc->add_option("--model", ev.model, "Checkpoint file")->required();
    evalc->add_option("--split", ev.split, "train, val or test")->capture_default_str();
    evalc->add_option("--clips", ev.clips, "Clips averaged per video")->capture_default_str()->check(CLI::PositiveNumber);
    evalc->add_option("--frames", ev.frames, "Frames per clip")->capture_default_str()->check(CLI::PositiveNumber);
    evalc->add_option("--crop", ev.crop, "Center crop size")->capture_default_str()->check(CLI::PositiveNumber);
    evalc->add_option("--threads", ev.threads, "Worker threads (default: CVR_THREADS or 1)");
    evalc->callback([&] { action = [&] { return do_eval(ev, out); }; });

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "Train and evaluate variants over seeds; print a CSV table");
    ablate->add_option("--data", ab.data, "Dataset directory")->required();
    ablate->add_option("--variants", ab.variants, "Comma-separated variants (default: all)")->delimiter(',');
    ablate->add_option("--seeds", ab.seeds, "Comma-separated seeds")->delimiter(',')->capture_default_str();
    ablate->add_option("--config", ab.config, "Training config file (key=value)");
    ablate->add_option("--model-config", ab.model_config, "Model config file (key=value)");
    ablate->add_option("--output", ab.output, "Write the CSV here instead of stdout");
    ablate->add_option("--lr", ab.lr);
    ablate->add_option("--epochs", ab.epochs);
    ablate->add_option("--threads", ab.threads, "Evaluation threads (default: CVR_THREADS or 1)");
    ablate->callback([&] { action = [&] { return do_ablate(ab, out, err); }; });

    GradCheckArgs gc;
    auto* gradc = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients per block");
    gradc->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str();
    gradc->add_option("--tolerance", gc.tolerance, "Largest accepted relative error")->capture_default_str();
    gradc->add_option("--coords", gc.coords, "Coordinates sampled per tensor")->capture_default_str()
        ->check(CLI::PositiveNumber);
    gradc->add_option("--seed", gc.seed)->capture_default_str();
    gradc->callback([&] { action = [&] { return do_grad_check(gc, out); }; });

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "Measure encode, extract and forward throughput");
    bench->add_option("--height", be.height)->capture_default_str();
    bench->add_option("--width", be.width)->capture_default_str();
    bench->add_option("--frames", be.frames)->capture_default_str();
    bench->add_option("--iterations", be.iterations)->capture_default_str();
    bench->add_option("--seed", be.seed)->capture_default_str();
    bench->callback([&] { action = [&] { return do_bench(be, out); }; });

    InspectArgs in;
    auto* inspect = app.add_subcommand("inspect", "Print headers of a stream, video, tensor or checkpoint file");
    inspect->add_option("--input", in.input, "File to inspect")->required();
    inspect->callback([&] { action = [&] { return do_inspect(in, out); }; });

    if (!args.empty() && !args[0].starts_with("-") && !app.get_subcommand_no_throw(args[0])) {
        err << "error[usage]: unknown subcommand '" << args[0] << "'\n" << app.help();
        return kUsage;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        code = action();
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        code = kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        code = kOk;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << '\n' << app.help();
        code = kUsage;
    } catch (const Error& e) {
        err << "error[" << error_kind_name(e.kind()) << "]: " << e.what() << '\n';
        code = exit_code_for(e.kind());
    } catch (const std::bad_alloc&) {
        err << "error[resource]: out of memory\n";
        code = kDataError;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << '\n';
        code = kDataError;
    }
    out.flush();
    return code;
}

}  // namespace cvr::cli
