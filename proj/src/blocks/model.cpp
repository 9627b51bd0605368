#include "cvr/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "cvr/binary_io.hpp"
#include "cvr/errors.hpp"
#include "cvr/serialize.hpp"

namespace cvr {

namespace {

constexpr std::string_view kCheckpointMagic = "CVRCKPT 1\n";
constexpr std::string_view kHeaderEnd = "---\n";

const char* mvr_block_name(MvrBlock b) {
    switch (b) {
        case MvrBlock::bottleneck: return "bottleneck";
        case MvrBlock::bottleneck_dm: return "bottleneck_dm";
        case MvrBlock::msb: return "msb";
    }
    return "msb";
}

const char* interaction_name(Interaction i) {
    switch (i) {
        case Interaction::none: return "none";
        case Interaction::add: return "add";
        case Interaction::smc: return "smc";
    }
    return "none";
}

std::string stage_label(std::size_t s) { return "stage " + std::to_string(s + 1); }

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

std::size_t ModelConfig::key_dim() const {
    if (cma_key_dim != 0) return cma_key_dim;
    return std::max<std::size_t>(1, widths.empty() ? 1 : widths.back() / 16);
}

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (rgb_channels == 0 || mvr_channels == 0) throw ConfigError("input channel counts must be positive");
    if (!rgb_stream && !mvr_stream) throw ConfigError("at least one stream must be enabled");
    if (stem_width == 0 || stem_pool == 0) throw ConfigError("stem width and pool must be positive");
    if (widths.empty()) throw ConfigError("stage plan is empty");
    const std::size_t n = widths.size();
    if (blocks.size() != n || temporal_strides.size() != n || spatial_strides.size() != n) {
        throw ConfigError("stage plan lists differ in length: widths " + std::to_string(n) + ", blocks " +
                          std::to_string(blocks.size()) + ", temporal_strides " +
                          std::to_string(temporal_strides.size()) + ", spatial_strides " +
                          std::to_string(spatial_strides.size()));
    }
    if (bottleneck_ratio == 0) throw ConfigError("bottleneck_ratio must be positive");
    for (std::size_t s = 0; s < n; ++s) {
        if (widths[s] == 0) throw ConfigError(stage_label(s) + ": width must be positive");
        if (blocks[s] == 0) throw ConfigError(stage_label(s) + ": needs at least one block");
        if (temporal_strides[s] == 0 || spatial_strides[s] == 0) {
            throw ConfigError(stage_label(s) + ": strides must be positive");
        }
        if (widths[s] % bottleneck_ratio != 0) {
            throw ConfigError(stage_label(s) + ": width " + std::to_string(widths[s]) +
                              " not divisible by bottleneck_ratio " + std::to_string(bottleneck_ratio));
        }
        const std::size_t mid = widths[s] / bottleneck_ratio;
        if (mvr_stream && mvr_block == MvrBlock::msb && mid % 4 != 0) {
            throw ConfigError(stage_label(s) + ": MSB mid width " + std::to_string(mid) + " not divisible by 4");
        }
    }
    if ((interaction != Interaction::none || cma) && !(rgb_stream && mvr_stream)) {
        throw ConfigError("cross-modal interaction needs both streams");
    }
    if (interaction == Interaction::smc && smc_ratio == 0) throw ConfigError("smc_ratio must be positive");
}

const std::vector<std::string>& ModelConfig::keys() {
    static const std::vector<std::string> k = {
        "num_classes",     "rgb_channels",    "mvr_channels",      "stem_width",       "stem_pool",
        "widths",          "blocks",          "temporal_strides",  "spatial_strides",  "bottleneck_ratio",
        "rgb_stream",      "mvr_stream",      "mvr_block",         "msb_dm",           "msb_fixed_temporal",
        "msb_cascade",     "interaction",     "smc_ratio",         "cma",              "cma_key_dim",
        "seed"};
    return k;
}

KeyValues ModelConfig::to_kv() const {
    KeyValues kv;
    kv.set("num_classes", num_classes);
    kv.set("rgb_channels", rgb_channels);
    kv.set("mvr_channels", mvr_channels);
    kv.set("stem_width", stem_width);
    kv.set("stem_pool", stem_pool);
    kv.set("widths", widths);
    kv.set("blocks", blocks);
    kv.set("temporal_strides", temporal_strides);
    kv.set("spatial_strides", spatial_strides);
    kv.set("bottleneck_ratio", bottleneck_ratio);
    kv.set("rgb_stream", rgb_stream);
    kv.set("mvr_stream", mvr_stream);
    kv.set("mvr_block", mvr_block_name(mvr_block));
    kv.set("msb_dm", msb_dm);
    kv.set("msb_fixed_temporal", msb_fixed_temporal);
    kv.set("msb_cascade", msb_cascade == nn::CascadeMode::cascaded ? "cascaded" : "literal");
    kv.set("interaction", interaction_name(interaction));
    kv.set("smc_ratio", smc_ratio);
    kv.set("cma", cma);
    kv.set("cma_key_dim", cma_key_dim);
    kv.set("seed", std::to_string(seed));
    return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
    kv.require_known(keys(), "model config");
    ModelConfig c;
    c.num_classes = kv.get_size("num_classes", c.num_classes);
    c.rgb_channels = kv.get_size("rgb_channels", c.rgb_channels);
    c.mvr_channels = kv.get_size("mvr_channels", c.mvr_channels);
    c.stem_width = kv.get_size("stem_width", c.stem_width);
    c.stem_pool = kv.get_size("stem_pool", c.stem_pool);
    c.widths = kv.get_sizes("widths", c.widths);
    c.blocks = kv.get_sizes("blocks", c.blocks);
    c.temporal_strides = kv.get_sizes("temporal_strides", c.temporal_strides);
    c.spatial_strides = kv.get_sizes("spatial_strides", c.spatial_strides);
    c.bottleneck_ratio = kv.get_size("bottleneck_ratio", c.bottleneck_ratio);
    c.rgb_stream = kv.get_bool("rgb_stream", c.rgb_stream);
    c.mvr_stream = kv.get_bool("mvr_stream", c.mvr_stream);
    const std::string block = kv.get_string("mvr_block", mvr_block_name(c.mvr_block));
    if (block == "bottleneck") c.mvr_block = MvrBlock::bottleneck;
    else if (block == "bottleneck_dm") c.mvr_block = MvrBlock::bottleneck_dm;
    else if (block == "msb") c.mvr_block = MvrBlock::msb;
    else throw ConfigError("mvr_block '" + block + "' is not one of bottleneck, bottleneck_dm, msb");
    c.msb_dm = kv.get_bool("msb_dm", c.msb_dm);
    c.msb_fixed_temporal = kv.get_bool("msb_fixed_temporal", c.msb_fixed_temporal);
    const std::string cascade = kv.get_string("msb_cascade", "cascaded");
    if (cascade == "cascaded") c.msb_cascade = nn::CascadeMode::cascaded;
    else if (cascade == "literal") c.msb_cascade = nn::CascadeMode::literal;
    else throw ConfigError("msb_cascade '" + cascade + "' is not one of cascaded, literal");
    const std::string inter = kv.get_string("interaction", interaction_name(c.interaction));
    if (inter == "none") c.interaction = Interaction::none;
    else if (inter == "add") c.interaction = Interaction::add;
    else if (inter == "smc") c.interaction = Interaction::smc;
    else throw ConfigError("interaction '" + inter + "' is not one of none, add, smc");
    c.smc_ratio = kv.get_size("smc_ratio", c.smc_ratio);
    c.cma = kv.get_bool("cma", c.cma);
    c.cma_key_dim = kv.get_size("cma_key_dim", c.cma_key_dim);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = {"rgb-only", "mvr-only", "full",   "b1",     "b1+msb", "b1+msb*",
                                                   "b1+dm",    "cme",      "b2",     "b2+add", "b2+smc", "b2+cma"};
    return names;
}

ModelConfig apply_variant(ModelConfig c, std::string_view variant) {
    std::string v(variant);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });

    auto single_mvr = [&](MvrBlock block, bool dm, bool fixed) {
        c.rgb_stream = false;
        c.mvr_stream = true;
        c.interaction = Interaction::none;
        c.cma = false;
        c.mvr_block = block;
        c.msb_dm = dm;
        c.msb_fixed_temporal = fixed;
    };
    auto two_stream = [&](Interaction inter, bool cma) {
        c.rgb_stream = c.mvr_stream = true;
        c.mvr_block = MvrBlock::msb;
        c.msb_dm = true;
        c.msb_fixed_temporal = false;
        c.interaction = inter;
        c.cma = cma;
    };

    if (v == "rgb-only") {
        c.rgb_stream = true;
        c.mvr_stream = false;
        c.interaction = Interaction::none;
        c.cma = false;
    } else if (v == "mvr-only" || v == "cme") {
        single_mvr(MvrBlock::msb, true, false);
    } else if (v == "full") {
        two_stream(Interaction::smc, true);
    } else if (v == "b1") {
        single_mvr(MvrBlock::bottleneck, false, false);
    } else if (v == "b1+msb") {
        single_mvr(MvrBlock::msb, false, false);
    } else if (v == "b1+msb*") {
        single_mvr(MvrBlock::msb, false, true);
    } else if (v == "b1+dm") {
        single_mvr(MvrBlock::bottleneck_dm, false, false);
    } else if (v == "b2") {
        two_stream(Interaction::none, false);
    } else if (v == "b2+add") {
        two_stream(Interaction::add, false);
    } else if (v == "b2+smc") {
        two_stream(Interaction::smc, false);
    } else if (v == "b2+cma") {
        two_stream(Interaction::none, true);
    } else {
        std::string valid;
        for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw UsageError("unknown variant '" + std::string(variant) + "'; valid: " + valid);
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

std::vector<Tensor> ModelOutput::heads() const {
    std::vector<Tensor> out;
    for (const Tensor* t : {&z_rgb, &z_mvr, &z_fused}) {
        if (t->defined()) out.push_back(*t);
    }
    return out;
}

namespace {

struct MvrUnit {
    std::optional<nn::BottleneckBlock> plain;
    std::optional<nn::MultiScaleBlock> msb;
    Tensor forward(const Tensor& x) const { return plain ? plain->forward(x) : msb->forward(x); }
};

struct Stream {
    nn::Conv3d stem;
    std::size_t stem_pool = 1;
    std::vector<std::vector<nn::BottleneckBlock>> rgb;  // used by the RGB stream
    std::vector<std::vector<MvrUnit>> mvr;              // used by the MVR stream
    nn::ClsHead head;

    Tensor run_stem(const Tensor& x) const {
        const Tensor pooled = stem_pool > 1 ? pool(x, PoolMode::avg_spatial, stem_pool) : x;
        return relu(stem(pooled));
    }
};

Triple stage_stride(const ModelConfig& c, std::size_t s, std::size_t b) {
    if (b != 0) return {1, 1, 1};
    return {c.temporal_strides[s], c.spatial_strides[s], c.spatial_strides[s]};
}

}  // namespace

struct TwoStreamModel::Network {
    std::optional<Stream> rgb;
    std::optional<Stream> mvr;
    std::vector<nn::SelectiveMotionComplement> smc;
    std::optional<nn::CrossModalityAugment> cma;
    std::optional<nn::ClsHead> fused_head;
    Tensor rgb_mean, rgb_std;  // (1, C, 1, 1, 1)
};

TwoStreamModel::TwoStreamModel(const ModelConfig& config) : config_(config), net_(std::make_unique<Network>()) {
    config_.validate();
    const ModelConfig& c = config_;
    Rng rng(c.seed);
    Network& net = *net_;

    auto build_stream = [&](const std::string& prefix, std::size_t in_channels, bool is_rgb) {
        Stream st;
        st.stem_pool = c.stem_pool;
        st.stem = nn::Conv3d(params_, prefix + ".stem",
                             nn::ConvSpec{in_channels, c.stem_width, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true}, rng);
        std::size_t in = c.stem_width;
        for (std::size_t s = 0; s < c.stage_count(); ++s) {
            const std::size_t width = c.widths[s];
            const std::size_t mid = width / c.bottleneck_ratio;
            if (is_rgb) st.rgb.emplace_back();
            else st.mvr.emplace_back();
            for (std::size_t b = 0; b < c.blocks[s]; ++b) {
                const std::string path = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                const Triple stride = stage_stride(c, s, b);
                if (is_rgb) {
                    st.rgb.back().emplace_back(params_, path, nn::BottleneckConfig{in, mid, width, stride, false}, rng);
                } else {
                    MvrUnit unit;
                    if (c.mvr_block == MvrBlock::msb) {
                        unit.msb.emplace(params_, path,
                                         nn::MsbConfig{in, mid, width, stride, c.msb_dm, c.msb_fixed_temporal,
                                                       c.msb_cascade},
                                         rng);
                    } else {
                        unit.plain.emplace(
                            params_, path,
                            nn::BottleneckConfig{in, mid, width, stride, c.mvr_block == MvrBlock::bottleneck_dm}, rng);
                    }
                    st.mvr.back().push_back(std::move(unit));
                }
                in = width;
            }
        }
        st.head = nn::ClsHead(params_, prefix + ".head", in, c.num_classes, rng);
        return st;
    };

    if (c.rgb_stream) {
        net.rgb = build_stream("rgb", c.rgb_channels, true);
        net.rgb_mean = params_.add("input.rgb_mean", Tensor(Shape{1, c.rgb_channels, 1, 1, 1}, 0.0), false);
        net.rgb_std = params_.add("input.rgb_std", Tensor(Shape{1, c.rgb_channels, 1, 1, 1}, 1.0), false);
    }
    if (c.mvr_stream) net.mvr = build_stream("mvr", c.mvr_channels, false);
    if (c.interaction == Interaction::smc) {
        for (std::size_t s = 0; s < c.stage_count(); ++s) {
            net.smc.emplace_back(params_, "smc" + std::to_string(s + 1), nn::SmcConfig{c.widths[s], c.smc_ratio, 3},
                                 rng);
        }
    }
    if (c.cma) {
        net.cma.emplace(params_, "cma", nn::CmaConfig{c.widths.back(), c.key_dim()}, rng);
        net.fused_head.emplace(params_, "fused.head", c.key_dim(), c.num_classes, rng);
    }
}

TwoStreamModel::TwoStreamModel(TwoStreamModel&&) noexcept = default;
TwoStreamModel& TwoStreamModel::operator=(TwoStreamModel&&) noexcept = default;
TwoStreamModel::~TwoStreamModel() = default;

void TwoStreamModel::set_rgb_normalization(const std::vector<double>& mean, const std::vector<double>& stddev) {
    if (!config_.rgb_stream) return;
    if (mean.size() != config_.rgb_channels || stddev.size() != config_.rgb_channels) {
        throw DimensionError("RGB normalization needs " + std::to_string(config_.rgb_channels) + " values per statistic");
    }
    auto m = net_->rgb_mean.mutable_data();
    auto s = net_->rgb_std.mutable_data();
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!(stddev[i] > 0.0) || !std::isfinite(mean[i])) {
            throw NumericError("RGB normalization channel " + std::to_string(i) + " is degenerate");
        }
        m[i] = mean[i];
        s[i] = stddev[i];
    }
}

ModelOutput TwoStreamModel::forward(const Tensor& rgb, const Tensor& mvr) const {
    const ModelConfig& c = config_;
    const Network& net = *net_;
    if (c.rgb_stream && !rgb.defined()) throw PreconditionError("RGB stream enabled but no RGB input given");
    if (c.mvr_stream && !mvr.defined()) throw PreconditionError("MVR stream enabled but no MVR input given");
    if (c.rgb_stream && rgb.shape().c() != c.rgb_channels) {
        throw DimensionError("RGB input must have " + std::to_string(c.rgb_channels) + " channels, got " +
                             rgb.shape().str());
    }
    if (c.mvr_stream && mvr.shape().c() != c.mvr_channels) {
        throw DimensionError("MVR input must have " + std::to_string(c.mvr_channels) + " channels, got " +
                             mvr.shape().str());
    }

    Tensor fi, fp;
    if (c.rgb_stream) {
        // (x - mean) / std, with the reciprocal taken outside the graph.
        std::vector<double> inv(c.rgb_channels), shift(c.rgb_channels);
        const auto m = net.rgb_mean.data();
        const auto s = net.rgb_std.data();
        for (std::size_t i = 0; i < c.rgb_channels; ++i) {
            inv[i] = 1.0 / s[i];
            shift[i] = -m[i] / s[i];
        }
        const Shape ps{1, c.rgb_channels, 1, 1, 1};
        fi = net.rgb->run_stem(add(mul(rgb, Tensor(ps, inv)), Tensor(ps, shift)));
    }
    if (c.mvr_stream) fp = net.mvr->run_stem(mvr);

    for (std::size_t s = 0; s < c.stage_count(); ++s) {
        if (c.rgb_stream) {
            for (const auto& block : net.rgb->rgb[s]) fi = block.forward(fi);
        }
        if (c.mvr_stream) {
            for (const auto& block : net.mvr->mvr[s]) fp = block.forward(fp);
        }
        if (c.interaction == Interaction::add) fi = add(fi, fp);
        else if (c.interaction == Interaction::smc) fi = net.smc[s].forward(fi, fp);
    }

    ModelOutput out;
    if (c.rgb_stream) out.z_rgb = net.rgb->head.forward(fi);
    if (c.mvr_stream) out.z_mvr = net.mvr->head.forward(fp);
    if (c.cma) out.z_fused = net.fused_head->forward(net.cma->forward(fi, fp));
    const auto heads = out.heads();
    out.score = nn::mean_scores(heads);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> TwoStreamModel::serialize() const {
    ByteWriter w;
    w.text(kCheckpointMagic);
    w.text(config_.to_kv().str());
    w.text(kHeaderEnd);
    w.u32(static_cast<std::uint32_t>(params_.size()));
    for (const auto& [path, entry] : params_) {
        w.u32(static_cast<std::uint32_t>(path.size()));
        w.text(path);
        write_tensor(w, entry.tensor);
    }
    return w.take();
}

namespace {

// Returns the config and the offset of the first binary byte.
std::pair<ModelConfig, std::size_t> parse_checkpoint_header(std::span<const std::uint8_t> bytes) {
    const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (!view.starts_with(kCheckpointMagic)) throw ParseError("not a checkpoint (bad magic line)", 0);
    const std::size_t body = kCheckpointMagic.size();
    std::size_t end = std::string_view::npos;
    for (std::size_t pos = body; pos < view.size();) {
        const std::size_t nl = view.find('\n', pos);
        if (nl == std::string_view::npos) break;
        if (view.substr(pos, nl + 1 - pos) == kHeaderEnd) {
            end = pos;
            break;
        }
        pos = nl + 1;
    }
    if (end == std::string_view::npos) throw ParseError("checkpoint header has no end marker", body);
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_kv(KeyValues::parse(view.substr(body, end - body)));
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint config: ") + e.what(), body);
    }
    return {cfg, end + kHeaderEnd.size()};
}

}  // namespace

TwoStreamModel TwoStreamModel::deserialize(std::span<const std::uint8_t> bytes) {
    auto [cfg, start] = parse_checkpoint_header(bytes);
    TwoStreamModel model(cfg);
    ByteReader in(bytes.subspan(start), start);
    const std::size_t count_at = in.offset();
    const std::uint32_t count = in.u32();
    if (count != model.params_.size()) {
        throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                             std::to_string(model.params_.size()),
                         count_at);
    }
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = in.offset();
        const std::uint32_t len = in.u32();
        const auto raw = in.raw(len, "parameter path");
        const std::string path(raw.begin(), raw.end());
        if (!model.params_.contains(path)) throw ParseError("unknown parameter '" + path + "'", at);
        if (!seen.insert(path).second) throw ParseError("duplicate parameter '" + path + "'", at);
        const Tensor t = read_tensor(in);
        Tensor& dst = model.params_.get(path);
        if (!(t.shape() == dst.shape())) {
            throw ParseError("parameter '" + path + "' has shape " + t.shape().str() + ", expected " +
                                 dst.shape().str(),
                             at);
        }
        const auto src = t.data();
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
    if (!in.at_end()) throw ParseError("trailing bytes after last parameter", in.offset());
    return model;
}

void TwoStreamModel::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

TwoStreamModel TwoStreamModel::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    return parse_checkpoint_header(read_file_bytes(path)).first;
}

}  // namespace cvr
