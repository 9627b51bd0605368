#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvr/layers.hpp"

namespace cvr::nn {

// ---------------------------------------------------------------------------
// Denoising module
// ---------------------------------------------------------------------------

struct DmConfig {
    std::size_t channels = 4;
    std::size_t branch_index = 2;  // i in {2, 3, 4}

    // r = 2^(i-1)
    std::size_t pool_factor() const { return std::size_t{1} << (branch_index - 1); }
    void validate() const;
};

// sigmoid(T + S) * X with T = Rep(AvgPool_T(X)) and
// S = UP(Conv3x3(AvgPool_{S,r}(T))). Output shape equals input shape.
class DenoisingModule {
public:
    DenoisingModule() = default;
    DenoisingModule(ParamStore& store, const std::string& path, const DmConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;

    const DmConfig& config() const { return cfg_; }
    const Conv3d& conv() const { return conv_; }

private:
    DmConfig cfg_;
    Conv3d conv_;
};

// ---------------------------------------------------------------------------
// Residual blocks
// ---------------------------------------------------------------------------

enum class CascadeMode {
    cascaded,  // branch i >= 3 adds the previous branch's actual output
    literal,   // branch i >= 3 adds ST_{i-1}(DM(X_{i-1})) on the raw split
};

struct MsbConfig {
    std::size_t in_channels = 16;
    std::size_t mid_channels = 16;
    std::size_t out_channels = 16;
    Triple stride{1, 1, 1};
    bool with_dm = true;
    bool fixed_temporal_kernel = false;  // every branch uses temporal kernel 3
    CascadeMode cascade = CascadeMode::cascaded;

    // Temporal kernel of branch i in {2, 3, 4}: 2i - 3, or 3 when fixed.
    std::size_t temporal_kernel(std::size_t branch) const {
        return fixed_temporal_kernel ? 3 : 2 * branch - 3;
    }
    void validate() const;
};

// Four-branch multi-scale block: entry 1x1x1 conv, channel split, identity
// first branch, DM + spatial/temporal convs on branches 2..4 with cascaded
// inputs, concat, fusion 1x1x1 conv, residual shortcut.
class MultiScaleBlock {
public:
    MultiScaleBlock() = default;
    MultiScaleBlock(ParamStore& store, const std::string& path, const MsbConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    const MsbConfig& config() const { return cfg_; }

private:
    struct Branch {
        std::optional<DenoisingModule> dm;
        Conv3d spatial;
        Conv3d temporal;
    };
    Tensor run_branch(std::size_t b, const Tensor& in) const;

    MsbConfig cfg_;
    Conv3d entry_;
    std::array<Branch, 3> branches_;  // branches 2, 3, 4
    Conv3d fuse_;
    std::optional<Conv3d> shortcut_;
};

struct BottleneckConfig {
    std::size_t in_channels = 16;
    std::size_t mid_channels = 16;
    std::size_t out_channels = 16;
    Triple stride{1, 1, 1};
    bool with_dm = false;  // DM after the 1x3x3 conv
    void validate() const;
};

// 1x1x1 -> 3x1x1 -> 1x3x3 -> 1x1x1 with a residual shortcut.
class BottleneckBlock {
public:
    BottleneckBlock() = default;
    BottleneckBlock(ParamStore& store, const std::string& path, const BottleneckConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    const BottleneckConfig& config() const { return cfg_; }

private:
    BottleneckConfig cfg_;
    Conv3d entry_, temporal_, spatial_, exit_;
    std::optional<DenoisingModule> dm_;
    std::optional<Conv3d> shortcut_;
};

// ---------------------------------------------------------------------------
// Cross-modal interaction
// ---------------------------------------------------------------------------

struct SmcConfig {
    std::size_t channels = 16;
    std::size_t ratio = 16;          // Att_SP bottleneck C -> C/ratio -> C
    std::size_t channel_kernel = 3;  // Att_C kernel along the channel axis
    void validate() const;
};

// F_I + F'_P * sigmoid(Att_C(GMP(F'_P))) with
// F'_P = F_P * sigmoid(Att_SP(MP(F_P))). Only the RGB feature changes.
class SelectiveMotionComplement {
public:
    SelectiveMotionComplement() = default;
    SelectiveMotionComplement(ParamStore& store, const std::string& path, const SmcConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& f_rgb, const Tensor& f_mvr) const;
    // Spatio-temporally attended motion feature F'_P.
    Tensor attend(const Tensor& f_mvr) const;
    // Per-channel weights (N, C, 1, 1, 1) computed from F'_P.
    Tensor channel_weights(const Tensor& attended) const;

    const SmcConfig& config() const { return cfg_; }
    const Conv3d& squeeze() const { return conv0_; }
    const Conv3d& expand() const { return conv1_; }
    const Conv3d& channel_conv() const { return conv2_; }

private:
    SmcConfig cfg_;
    Conv3d conv0_, conv1_, conv2_;
};

struct CmaConfig {
    std::size_t channels = 128;
    std::size_t key_dim = 8;
    void validate() const;
};

struct CmaResult {
    Tensor fused;         // (N, d_k, T, H, W)
    Tensor attn_rgb;      // softmax(Q_P K_I^T / sqrt(d_k)), (N, 1, 1, L, L)
    Tensor attn_mvr;      // softmax(Q_I K_P^T / sqrt(d_k))
};

// Non-local cross attention over both modalities; returns
// softmax(Q_P K_I^T/sqrt(d_k)) V_I + softmax(Q_I K_P^T/sqrt(d_k)) V_P.
class CrossModalityAugment {
public:
    CrossModalityAugment() = default;
    CrossModalityAugment(ParamStore& store, const std::string& path, const CmaConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& f_rgb, const Tensor& f_mvr) const { return forward_detailed(f_rgb, f_mvr).fused; }
    CmaResult forward_detailed(const Tensor& f_rgb, const Tensor& f_mvr) const;

    const CmaConfig& config() const { return cfg_; }
    // Projection order: key_rgb, query_rgb, value_rgb, key_mvr, query_mvr, value_mvr.
    const Conv3d& projection(std::size_t i) const { return proj_[i]; }

private:
    CmaConfig cfg_;
    std::array<Conv3d, 6> proj_;
};

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

// Global average pool followed by one affine map; logits are (N, K, 1, 1, 1).
class ClsHead {
public:
    ClsHead() = default;
    ClsHead(ParamStore& store, const std::string& path, std::size_t channels, std::size_t classes, Rng& rng);

    Tensor forward(const Tensor& x) const;
    const Conv3d& fc() const { return fc_; }

private:
    std::size_t channels_ = 0;
    Conv3d fc_;
};

// s = (z_I + z_P + z_fused) / 3
Tensor fuse_scores(const Tensor& z_rgb, const Tensor& z_mvr, const Tensor& z_fused);
// Arithmetic mean of any number of equally shaped logit tensors.
Tensor mean_scores(std::span<const Tensor> logits);

// Index of the largest logit per sample; ties go to the lowest index.
std::vector<int> argmax_classes(const Tensor& logits);

}  // namespace cvr::nn
