#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/blocks.hpp"
#include "cvr/kv_text.hpp"

namespace cvr {

enum class MvrBlock { bottleneck, bottleneck_dm, msb };
enum class Interaction { none, add, smc };

struct ModelConfig {
    std::size_t num_classes = 5;
    std::size_t rgb_channels = 3;
    std::size_t mvr_channels = 5;

    // Stem: avg_spatial(stem_pool), then a 1x3x3 conv with spatial stride 2.
    std::size_t stem_width = 16;
    std::size_t stem_pool = 2;

    std::vector<std::size_t> widths{16, 32, 64, 128};
    std::vector<std::size_t> blocks{1, 1, 1, 1};
    std::vector<std::size_t> temporal_strides{1, 2, 2, 1};
    std::vector<std::size_t> spatial_strides{1, 2, 2, 2};
    std::size_t bottleneck_ratio = 2;  // mid = width / ratio

    bool rgb_stream = true;
    bool mvr_stream = true;

    MvrBlock mvr_block = MvrBlock::msb;
    bool msb_dm = true;
    bool msb_fixed_temporal = false;
    nn::CascadeMode msb_cascade = nn::CascadeMode::cascaded;

    Interaction interaction = Interaction::smc;  // after every stage
    std::size_t smc_ratio = 16;
    bool cma = true;
    std::size_t cma_key_dim = 0;  // 0: final width / 16

    std::uint64_t seed = 0;

    std::size_t stage_count() const { return widths.size(); }
    std::size_t key_dim() const;
    // Throws ConfigError naming the offending stage or field.
    void validate() const;

    KeyValues to_kv() const;
    // Unknown keys are rejected; absent keys keep their defaults.
    static ModelConfig from_kv(const KeyValues& kv);
    static const std::vector<std::string>& keys();
};

// Ablation variants: rgb-only, mvr-only, full, b1, b1+msb, b1+msb*, b1+dm,
// cme, b2, b2+add, b2+smc, b2+cma.
const std::vector<std::string>& variant_names();
ModelConfig apply_variant(ModelConfig base, std::string_view variant);

struct ModelOutput {
    Tensor z_rgb;    // undefined when the stream is disabled
    Tensor z_mvr;
    Tensor z_fused;  // undefined without CMA
    Tensor score;    // mean of the available heads

    // Defined heads, in the order rgb, mvr, fused.
    std::vector<Tensor> heads() const;
};

class TwoStreamModel {
public:
    explicit TwoStreamModel(const ModelConfig& config);
    TwoStreamModel(TwoStreamModel&&) noexcept;
    TwoStreamModel& operator=(TwoStreamModel&&) noexcept;
    TwoStreamModel(const TwoStreamModel&) = delete;
    TwoStreamModel& operator=(const TwoStreamModel&) = delete;
    ~TwoStreamModel();

    // rgb is (N, 3, T, H, W) in [0, 1]; mvr is (N, 5, T, H, W). Either may be
    // undefined when its stream is disabled.
    ModelOutput forward(const Tensor& rgb, const Tensor& mvr) const;

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t parameter_count() const { return params_.parameter_count(true); }

    // Per-channel RGB standardization, stored as frozen parameters so that
    // checkpoints carry it.
    void set_rgb_normalization(const std::vector<double>& mean, const std::vector<double>& stddev);

    std::vector<std::uint8_t> serialize() const;
    static TwoStreamModel deserialize(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static TwoStreamModel load(const std::filesystem::path& path);

private:
    struct Network;

    ModelConfig config_;
    ParamStore params_;
    std::unique_ptr<Network> net_;
};

// Bytes preceding the binary records of a checkpoint: "CVRCKPT 1", the
// config as key=value lines, then a "---" line.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace cvr
