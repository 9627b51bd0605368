#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/codec.hpp"
#include "cvr/kv_text.hpp"
#include "cvr/model.hpp"

namespace cvr::train {

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

// Motion pattern per class label, in label order.
enum class Motion { translate_down, translate_up, oscillate_horizontal, still, zoom_in };
const char* motion_name(Motion m);

struct DatasetSpec {
    std::size_t n_classes = 5;  // uses the first n_classes motion patterns
    std::size_t videos_per_class = 40;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t frames = 24;
    std::size_t gop_size = codec::kDefaultGopSize;
    int search_range = codec::kDefaultSearchRange;
    int noise = 3;  // per-pixel uniform integer noise amplitude
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    KeyValues to_kv() const;
    static DatasetSpec from_kv(const KeyValues& kv);
    static const std::vector<std::string>& keys();
};

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
    std::string path;  // relative to the dataset directory
    int label = 0;
    Split split = Split::train;
};

std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);

// Renders one video of the given class. Deterministic in `rng`.
codec::RawVideo render_video(const DatasetSpec& spec, int label, Rng& rng);

// Writes <dir>/dataset.cfg, <dir>/manifest.tsv and <dir>/videos/*.gops.
// Returns the manifest.
std::vector<ManifestEntry> generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

// Streams of a generated dataset with accumulation precomputed.
class Dataset {
public:
    static Dataset load(const std::filesystem::path& dir);

    struct Item {
        std::unique_ptr<codec::GopStream> stream;
        std::unique_ptr<codec::DecodedStream> decoded;
        int label = 0;
        Split split = Split::train;
        std::string path;
    };

    std::size_t n_classes() const { return n_classes_; }
    const std::vector<Item>& items() const { return items_; }
    std::vector<std::size_t> indices(Split split) const;

    // Per-channel mean and standard deviation of I-frame pixels in [0, 1]
    // over the training split.
    std::pair<std::vector<double>, std::vector<double>> rgb_statistics() const;

private:
    std::size_t n_classes_ = 0;
    std::vector<Item> items_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 30;
    std::vector<std::size_t> decay_epochs{20};  // LR /= decay_factor when reached
    double decay_factor = 10.0;
    double grad_clip = 0.0;  // max global L2 norm of the gradient; 0 disables
    bool supervise_streams = true;  // loss over z_I, z_P, s; otherwise s only
    bool flip = true;
    std::size_t n_frames = 8;
    std::size_t crop = 48;
    std::uint64_t seed = 0;

    // Budget used by the desk-scale experiments: higher LR and a longer
    // schedule for training from scratch (lr 0.005, 60 epochs, decay at 40),
    // gradient norm clipped at 3.
    static TrainConfig toy();

    double lr_at(std::size_t epoch) const;  // epoch is 0-based
    void validate() const;
    KeyValues to_kv() const;
    static TrainConfig from_kv(const KeyValues& kv, const TrainConfig& defaults);
    static TrainConfig from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig{}); }
    static const std::vector<std::string>& keys();
};

// SGD with momentum; weight decay enters as g + lambda * theta.
class Sgd {
public:
    Sgd(ParamStore& params, double lr, double momentum, double weight_decay);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();

private:
    ParamStore& params_;
    double lr_, momentum_, weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

// Rescales all trainable gradients so their global L2 norm is at most
// `max_norm`. Returns the norm before rescaling.
double clip_grad_norm(ParamStore& params, double max_norm);

struct Batch {
    Tensor rgb;
    Tensor mvr;
    std::vector<int> labels;
};

Batch make_batch(const std::vector<codec::ClipSample>& clips);

// Mean cross-entropy over the heads used for supervision.
Tensor training_loss(const ModelOutput& out, std::span<const int> labels, bool supervise_streams);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    double val_top1 = 0.0;  // negative when the split is empty
    double seconds = 0.0;

    std::string str() const;  // one line of key=value pairs
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
};

// Sets RGB normalization from the training split, then trains. Each epoch
// record is written to `log` as it completes.
TrainResult train(TwoStreamModel& model, const Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::size_t n_clips = 1;
    std::size_t n_frames = 8;
    std::size_t crop = 48;
    std::size_t threads = 1;
};

struct EvalResult {
    std::size_t count = 0;
    double top1 = 0.0;      // fused score s
    double top1_rgb = -1.0;  // negative when the head is absent
    double top1_mvr = -1.0;
    double top1_fused_head = -1.0;
    std::vector<double> per_clip_top1;  // s from clip i alone
    std::vector<int> labels;
    std::vector<std::vector<double>> scores;  // clip-averaged s per video
};

EvalResult evaluate(const TwoStreamModel& model, const Dataset& data, Split split, const EvalOptions& opts);

// Top-1 of averaged logits with lowest-index tie-break.
double top1_from_scores(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationOptions {
    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds{0};
    ModelConfig base;
    TrainConfig train = TrainConfig::toy();
    std::size_t threads = 1;
};

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::size_t params = 0;
    double top1 = 0.0;
    double top1_3clip = 0.0;
    double top1_rgb = -1.0;
    double top1_mvr = -1.0;
    double final_loss = 0.0;
    double seconds = 0.0;
};

std::vector<AblationRow> run_ablation(const Dataset& data, const AblationOptions& opts,
                                      std::ostream* progress = nullptr);

std::string ablation_csv_header();
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cvr::train
