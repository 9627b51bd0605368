#include <algorithm>
#include <cmath>

#include "cvr/blocks.hpp"
#include "cvr/errors.hpp"

namespace cvr::nn {

namespace {

bool is_identity_stride(const Triple& s) { return s[0] == 1 && s[1] == 1 && s[2] == 1; }

void require_positive(std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
}

}  // namespace

// ---------------------------------------------------------------------------

void DmConfig::validate() const {
    require_positive(channels, "DM channels");
    if (branch_index < 2 || branch_index > 4) {
        throw ConfigError("DM branch index " + std::to_string(branch_index) + " outside [2, 4]");
    }
}

DenoisingModule::DenoisingModule(ParamStore& store, const std::string& path, const DmConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    conv_ = Conv3d(store, path + ".conv", spatial3x3_spec(cfg.channels, cfg.channels), rng);
}

Tensor DenoisingModule::forward(const Tensor& x) const {
    if (x.shape().c() != cfg_.channels) {
        throw DimensionError("DM expects " + std::to_string(cfg_.channels) + " channels, got " + x.shape().str());
    }
    // The temporal mean is constant along T, so Rep() is left to broadcasting:
    // pooling, convolving and upsampling a single slice gives the same values.
    const Tensor t_mean = pool(x, PoolMode::avg_temporal_global);
    const Tensor low = pool(t_mean, PoolMode::avg_spatial, cfg_.pool_factor());
    const Tensor s = resize_bilinear(conv_(low), x.shape().h(), x.shape().w());
    return mul(sigmoid(add(t_mean, s)), x);
}

// ---------------------------------------------------------------------------

void MsbConfig::validate() const {
    require_positive(in_channels, "MSB input channels");
    require_positive(mid_channels, "MSB mid channels");
    require_positive(out_channels, "MSB output channels");
    if (mid_channels % 4 != 0) {
        throw ConfigError("MSB mid channels " + std::to_string(mid_channels) + " not divisible by 4");
    }
}

MultiScaleBlock::MultiScaleBlock(ParamStore& store, const std::string& path, const MsbConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    const std::size_t part = cfg.mid_channels / 4;
    entry_ = Conv3d(store, path + ".entry", pointwise_spec(cfg.in_channels, cfg.mid_channels, cfg.stride), rng);
    for (std::size_t b = 0; b < 3; ++b) {
        const std::size_t i = b + 2;
        const std::string bp = path + ".branch" + std::to_string(i);
        if (cfg.with_dm) branches_[b].dm.emplace(store, bp + ".dm", DmConfig{part, i}, rng);
        branches_[b].spatial = Conv3d(store, bp + ".spatial", spatial3x3_spec(part, part), rng);
        branches_[b].temporal = Conv3d(store, bp + ".temporal", temporal_spec(part, part, cfg.temporal_kernel(i)), rng);
    }
    fuse_ = Conv3d(store, path + ".fuse", pointwise_spec(cfg.mid_channels, cfg.out_channels), rng);
    if (cfg.in_channels != cfg.out_channels || !is_identity_stride(cfg.stride)) {
        shortcut_.emplace(store, path + ".shortcut", pointwise_spec(cfg.in_channels, cfg.out_channels, cfg.stride),
                          rng);
    }
}

Tensor MultiScaleBlock::run_branch(std::size_t b, const Tensor& in) const {
    const Branch& br = branches_[b];
    const Tensor h = br.dm ? br.dm->forward(in) : in;
    return relu(br.temporal(relu(br.spatial(h))));
}

Tensor MultiScaleBlock::forward(const Tensor& x) const {
    const Tensor y = relu(entry_(x));
    const std::vector<Tensor> parts = split_channels(y, 4);
    std::vector<Tensor> outs(4);
    outs[0] = parts[0];
    outs[1] = run_branch(0, parts[1]);
    // Under the literal reading the term added to X_i is the branch applied
    // to the raw split X_{i-1}; it differs from outs[i-1] only for i = 4.
    for (std::size_t i = 2; i < 4; ++i) {
        Tensor carry = outs[i - 1];
        if (cfg_.cascade == CascadeMode::literal && i == 3) carry = run_branch(1, parts[2]);
        outs[i] = run_branch(i - 1, add(parts[i], carry));
    }
    const Tensor z = fuse_(concat_channels(outs));
    return relu(add(z, shortcut_ ? (*shortcut_)(x) : x));
}

// ---------------------------------------------------------------------------

void BottleneckConfig::validate() const {
    require_positive(in_channels, "bottleneck input channels");
    require_positive(mid_channels, "bottleneck mid channels");
    require_positive(out_channels, "bottleneck output channels");
}

BottleneckBlock::BottleneckBlock(ParamStore& store, const std::string& path, const BottleneckConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    entry_ = Conv3d(store, path + ".entry", pointwise_spec(cfg.in_channels, cfg.mid_channels, cfg.stride), rng);
    temporal_ = Conv3d(store, path + ".temporal", temporal_spec(cfg.mid_channels, cfg.mid_channels, 3), rng);
    spatial_ = Conv3d(store, path + ".spatial", spatial3x3_spec(cfg.mid_channels, cfg.mid_channels), rng);
    if (cfg.with_dm) dm_.emplace(store, path + ".dm", DmConfig{cfg.mid_channels, 2}, rng);
    exit_ = Conv3d(store, path + ".exit", pointwise_spec(cfg.mid_channels, cfg.out_channels), rng);
    if (cfg.in_channels != cfg.out_channels || !is_identity_stride(cfg.stride)) {
        shortcut_.emplace(store, path + ".shortcut", pointwise_spec(cfg.in_channels, cfg.out_channels, cfg.stride),
                          rng);
    }
}

Tensor BottleneckBlock::forward(const Tensor& x) const {
    Tensor h = relu(spatial_(relu(temporal_(relu(entry_(x))))));
    if (dm_) h = dm_->forward(h);
    return relu(add(exit_(h), shortcut_ ? (*shortcut_)(x) : x));
}

// ---------------------------------------------------------------------------

void SmcConfig::validate() const {
    require_positive(channels, "SMC channels");
    require_positive(ratio, "SMC reduction ratio");
    if (channel_kernel % 2 == 0) throw ConfigError("SMC channel kernel must be odd");
}

SelectiveMotionComplement::SelectiveMotionComplement(ParamStore& store, const std::string& path,
                                                     const SmcConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    const std::size_t hidden = std::max<std::size_t>(1, cfg.channels / cfg.ratio);
    conv0_ = Conv3d(store, path + ".spatial_squeeze", pointwise_spec(cfg.channels, hidden), rng);
    conv1_ = Conv3d(store, path + ".spatial_expand", pointwise_spec(hidden, cfg.channels), rng);
    conv2_ = Conv3d(store, path + ".channel",
                    ConvSpec{1, 1, {1, 1, cfg.channel_kernel}, {1, 1, 1}, {0, 0, cfg.channel_kernel / 2}, true}, rng);
}

Tensor SelectiveMotionComplement::attend(const Tensor& f_mvr) const {
    const Tensor gate = sigmoid(conv1_(relu(conv0_(pool(f_mvr, PoolMode::max3d_same)))));
    return mul(f_mvr, gate);
}

Tensor SelectiveMotionComplement::channel_weights(const Tensor& attended) const {
    const std::size_t n = attended.shape().n();
    const std::size_t c = attended.shape().c();
    const Tensor g = reshape(pool(attended, PoolMode::max_global), Shape{n, 1, 1, 1, c});
    return reshape(sigmoid(conv2_(g)), Shape{n, c, 1, 1, 1});
}

Tensor SelectiveMotionComplement::forward(const Tensor& f_rgb, const Tensor& f_mvr) const {
    if (!(f_rgb.shape() == f_mvr.shape())) {
        throw DimensionError("SMC stream features differ: " + f_rgb.shape().str() + " vs " + f_mvr.shape().str());
    }
    if (f_rgb.shape().c() != cfg_.channels) {
        throw DimensionError("SMC expects " + std::to_string(cfg_.channels) + " channels, got " +
                             f_rgb.shape().str());
    }
    const Tensor attended = attend(f_mvr);
    return add(f_rgb, mul(attended, channel_weights(attended)));
}

// ---------------------------------------------------------------------------

void CmaConfig::validate() const {
    require_positive(channels, "CMA channels");
    require_positive(key_dim, "CMA key dimension");
}

CrossModalityAugment::CrossModalityAugment(ParamStore& store, const std::string& path, const CmaConfig& cfg,
                                           Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    static const char* names[6] = {"key_rgb", "query_rgb", "value_rgb", "key_mvr", "query_mvr", "value_mvr"};
    for (std::size_t i = 0; i < 6; ++i) {
        ConvSpec spec = pointwise_spec(cfg.channels, cfg.key_dim);
        // A key bias adds a per-row constant to the logits, which softmax
        // cancels; it would be a parameter with identically zero gradient.
        spec.bias = i % 3 != 0;
        proj_[i] = Conv3d(store, path + "." + names[i], spec, rng);
    }
}

CmaResult CrossModalityAugment::forward_detailed(const Tensor& f_rgb, const Tensor& f_mvr) const {
    if (!(f_rgb.shape() == f_mvr.shape())) {
        throw DimensionError("CMA stream features differ: " + f_rgb.shape().str() + " vs " + f_mvr.shape().str());
    }
    const Shape& s = f_rgb.shape();
    if (s.c() != cfg_.channels) {
        throw DimensionError("CMA expects " + std::to_string(cfg_.channels) + " channels, got " + s.str());
    }
    const std::size_t n = s.n(), dk = cfg_.key_dim, len = s.t() * s.h() * s.w();
    // (N, dk, T, H, W) -> rows of dk x L, and the transposed L x dk view.
    auto keys = [&](const Tensor& f) { return reshape(f, Shape{n, 1, 1, dk, len}); };
    auto rows = [&](const Tensor& f) { return transpose_last2(keys(f)); };

    const Tensor k_rgb = keys(proj_[0](f_rgb));
    const Tensor q_rgb = rows(proj_[1](f_rgb));
    const Tensor v_rgb = rows(proj_[2](f_rgb));
    const Tensor k_mvr = keys(proj_[3](f_mvr));
    const Tensor q_mvr = rows(proj_[4](f_mvr));
    const Tensor v_mvr = rows(proj_[5](f_mvr));

    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    CmaResult r;
    r.attn_rgb = softmax_last(scale(matmul_batched(q_mvr, k_rgb), inv));
    r.attn_mvr = softmax_last(scale(matmul_batched(q_rgb, k_mvr), inv));
    const Tensor mixed = add(matmul_batched(r.attn_rgb, v_rgb), matmul_batched(r.attn_mvr, v_mvr));
    r.fused = reshape(transpose_last2(mixed), Shape{n, dk, s.t(), s.h(), s.w()});
    return r;
}

// ---------------------------------------------------------------------------

ClsHead::ClsHead(ParamStore& store, const std::string& path, std::size_t channels, std::size_t classes, Rng& rng)
    : channels_(channels) {
    require_positive(classes, "class count");
    fc_ = Conv3d(store, path + ".fc", pointwise_spec(channels, classes), rng);
}

Tensor ClsHead::forward(const Tensor& x) const {
    if (x.shape().c() != channels_) {
        throw DimensionError("classifier expects " + std::to_string(channels_) + " channels, got " +
                             x.shape().str());
    }
    return fc_(pool(x, PoolMode::avg_global));
}

Tensor fuse_scores(const Tensor& z_rgb, const Tensor& z_mvr, const Tensor& z_fused) {
    const Tensor parts[3] = {z_rgb, z_mvr, z_fused};
    return mean_scores(parts);
}

Tensor mean_scores(std::span<const Tensor> logits) {
    if (logits.empty()) throw PreconditionError("no logits to average");
    Tensor acc = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (!(logits[i].shape() == acc.shape())) {
            throw DimensionError("logit shapes differ: " + acc.shape().str() + " vs " + logits[i].shape().str());
        }
        acc = add(acc, logits[i]);
    }
    return logits.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(logits.size()));
}

std::vector<int> argmax_classes(const Tensor& logits) {
    const Shape& s = logits.shape();
    if (s.t() != 1 || s.h() != 1 || s.w() != 1) {
        throw DimensionError("logits must be (N, K, 1, 1, 1), got " + s.str());
    }
    const auto d = logits.data();
    std::vector<int> out(s.n());
    for (std::size_t i = 0; i < s.n(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < s.c(); ++k) {
            if (d[i * s.c() + k] > d[i * s.c() + best]) best = k;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace cvr::nn
