#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <thread>

#include "cvr/errors.hpp"
#include "cvr/train.hpp"

namespace cvr::train {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) best = k;
    }
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::toy() {
    TrainConfig c;
    c.lr = 0.005;
    c.epochs = 60;
    c.decay_epochs = {40};
    c.grad_clip = 3.0;
    return c;
}

double TrainConfig::lr_at(std::size_t epoch) const {
    double lr_now = lr;
    for (std::size_t d : decay_epochs) {
        if (epoch >= d) lr_now /= decay_factor;
    }
    return lr_now;
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
    if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be a finite non-negative number");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
        if (decay_epochs[i] == 0) throw ConfigError("decay epochs must be positive");
        if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
            throw ConfigError("decay epochs must be strictly increasing");
        }
    }
    if (n_frames == 0 || crop == 0) throw ConfigError("n_frames and crop must be positive");
}

const std::vector<std::string>& TrainConfig::keys() {
    static const std::vector<std::string> k = {"lr",      "momentum", "weight_decay", "batch_size", "epochs",
                                               "decay_epochs", "decay_factor", "grad_clip", "supervise_streams", "flip",
                                               "n_frames", "crop",     "seed"};
    return k;
}

KeyValues TrainConfig::to_kv() const {
    KeyValues kv;
    kv.set("lr", lr);
    kv.set("momentum", momentum);
    kv.set("weight_decay", weight_decay);
    kv.set("batch_size", batch_size);
    kv.set("epochs", epochs);
    kv.set("decay_epochs", decay_epochs);
    kv.set("decay_factor", decay_factor);
    kv.set("grad_clip", grad_clip);
    kv.set("supervise_streams", supervise_streams);
    kv.set("flip", flip);
    kv.set("n_frames", n_frames);
    kv.set("crop", crop);
    kv.set("seed", std::to_string(seed));
    return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, const TrainConfig& d) {
    kv.require_known(keys(), "train config");
    TrainConfig c = d;
    c.lr = kv.get_double("lr", d.lr);
    c.momentum = kv.get_double("momentum", d.momentum);
    c.weight_decay = kv.get_double("weight_decay", d.weight_decay);
    c.batch_size = kv.get_size("batch_size", d.batch_size);
    c.epochs = kv.get_size("epochs", d.epochs);
    c.decay_epochs = kv.get_sizes("decay_epochs", d.decay_epochs);
    c.decay_factor = kv.get_double("decay_factor", d.decay_factor);
    c.grad_clip = kv.get_double("grad_clip", d.grad_clip);
    c.supervise_streams = kv.get_bool("supervise_streams", d.supervise_streams);
    c.flip = kv.get_bool("flip", d.flip);
    c.n_frames = kv.get_size("n_frames", d.n_frames);
    c.crop = kv.get_size("crop", d.crop);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(d.seed)));
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Sgd::Sgd(ParamStore& params, double lr, double momentum, double weight_decay)
    : params_(params), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& [path, entry] : params_) velocity_.emplace_back(entry.tensor.numel(), 0.0);
}

void Sgd::step() {
    std::size_t i = 0;
    for (auto& [path, entry] : params_) {
        auto& v = velocity_[i++];
        if (!entry.trainable || !entry.tensor.has_grad()) continue;
        const auto g = entry.tensor.grad();
        auto theta = entry.tensor.mutable_data();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            v[k] = momentum_ * v[k] + (g[k] + weight_decay_ * theta[k]);
            theta[k] -= lr_ * v[k];
        }
    }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [path, entry] : params)
        if (entry.trainable && entry.tensor.has_grad())
            for (double g : entry.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& [path, entry] : params)
            if (entry.trainable && entry.tensor.has_grad())
                for (double& g : entry.tensor.mutable_grad()) g *= scale;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Batches and loss
// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<codec::ClipSample>& clips) {
    if (clips.empty()) throw PreconditionError("empty batch");
    std::vector<Tensor> rgb, mvr;
    Batch b;
    for (const auto& c : clips) {
        rgb.push_back(c.rgb);
        mvr.push_back(c.mvr);
        b.labels.push_back(c.label);
    }
    auto stack = [](const std::vector<Tensor>& parts) {
        const Shape& s0 = parts[0].shape();
        std::vector<double> data;
        data.reserve(s0.numel() * parts.size());
        for (const auto& p : parts) {
            if (!(p.shape() == s0)) throw DimensionError("clips in a batch differ in shape");
            data.insert(data.end(), p.data().begin(), p.data().end());
        }
        return Tensor(Shape{parts.size(), s0.c(), s0.t(), s0.h(), s0.w()}, std::move(data));
    };
    b.rgb = stack(rgb);
    b.mvr = stack(mvr);
    return b;
}

Tensor training_loss(const ModelOutput& out, std::span<const int> labels, bool supervise_streams) {
    std::vector<Tensor> terms;
    const auto heads = out.heads();
    if (supervise_streams && heads.size() > 1) {
        for (const auto& h : heads) terms.push_back(cross_entropy(h, labels));
    }
    terms.push_back(cross_entropy(out.score, labels));
    Tensor total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return terms.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(terms.size()));
}

std::string EpochRecord::str() const {
    std::ostringstream os;
    os << "epoch=" << epoch << " lr=" << format_double(lr) << " train_loss=" << format_double(train_loss)
       << " train_top1=" << format_double(train_top1) << " val_top1=" << format_double(val_top1)
       << " seconds=" << format_double(std::round(seconds * 1000.0) / 1000.0);
    return os.str();
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(TwoStreamModel& model, const Dataset& data, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    if (model.config().num_classes != data.n_classes()) {
        throw PreconditionError("model has " + std::to_string(model.config().num_classes) +
                                " classes, dataset has " + std::to_string(data.n_classes()));
    }
    std::vector<std::size_t> order = data.indices(Split::train);
    if (order.empty()) throw PreconditionError("training split is empty");
    const bool has_val = !data.indices(Split::val).empty();

    const auto [mean, stddev] = data.rgb_statistics();
    model.set_rgb_normalization(mean, stddev);

    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x51ED);
    Sgd opt(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay);
    codec::ClipOptions clip;
    clip.n_frames = cfg.n_frames;
    clip.crop_h = clip.crop_w = cfg.crop;
    clip.mode = codec::SampleMode::train;
    clip.flip = cfg.flip;

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        opt.set_lr(cfg.lr_at(epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, step = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<codec::ClipSample> clips;
            for (std::size_t j = start; j < end; ++j) {
                const auto& item = data.items()[order[j]];
                clips.push_back(codec::sample_clip(*item.decoded, clip, item.label, &rng));
            }
            const Batch batch = make_batch(clips);
            model.params().zero_grad();
            auto diverged = [&](const std::string& what) {
                return NumericError(what + " at epoch " + std::to_string(epoch + 1) + " step " +
                                    std::to_string(step + 1) + "; lower the learning rate (now " +
                                    format_double(opt.lr()) + ")");
            };
            ModelOutput out;
            Tensor loss;
            try {
                out = model.forward(batch.rgb, batch.mvr);
                loss = training_loss(out, batch.labels, cfg.supervise_streams);
            } catch (const NumericError& e) {
                throw diverged(e.what());
            }
            const double lv = loss.item();
            if (!std::isfinite(lv)) throw diverged("loss is " + format_double(lv));
            loss.backward();
            if (cfg.grad_clip > 0.0) clip_grad_norm(model.params(), cfg.grad_clip);
            opt.step();
            loss_sum += lv * static_cast<double>(end - start);
            const auto pred = nn::argmax_classes(out.score);
            for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == batch.labels[j];
            seen += end - start;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = opt.lr();
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.train_top1 = static_cast<double>(correct) / static_cast<double>(seen);
        rec.val_top1 = -1.0;
        if (has_val) {
            EvalOptions eo;
            eo.n_frames = cfg.n_frames;
            eo.crop = cfg.crop;
            rec.val_top1 = evaluate(model, data, Split::val, eo).top1;
        }
        rec.seconds = seconds_since(t0);
        if (log) *log << rec.str() << '\n' << std::flush;
        result.epochs.push_back(rec);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double top1_from_scores(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("score and label counts differ");
    if (scores.empty()) throw PreconditionError("no scores to rank");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += static_cast<int>(argmax_row(scores[i])) == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

EvalResult evaluate(const TwoStreamModel& model, const Dataset& data, Split split, const EvalOptions& opts) {
    const std::vector<std::size_t> idx = data.indices(split);
    if (idx.empty()) throw PreconditionError(std::string("split '") + split_name(split) + "' is empty");
    if (opts.n_clips == 0) throw UsageError("n_clips must be positive");
    const std::size_t K = model.config().num_classes;
    const std::size_t V = idx.size(), C = opts.n_clips;

    // head -> video -> clip -> logits; heads are s, rgb, mvr, fused.
    std::vector<std::vector<std::vector<std::vector<double>>>> logits(
        4, std::vector<std::vector<std::vector<double>>>(V, std::vector<std::vector<double>>(C)));

    auto work = [&](std::size_t begin, std::size_t end) {
        NoGradGuard guard;
        constexpr std::size_t kChunk = 8;
        for (std::size_t v0 = begin; v0 < end; v0 += kChunk) {
            const std::size_t v1 = std::min(end, v0 + kChunk);
            for (std::size_t ci = 0; ci < C; ++ci) {
                std::vector<codec::ClipSample> clips;
                codec::ClipOptions co;
                co.n_frames = opts.n_frames;
                co.crop_h = co.crop_w = opts.crop;
                co.mode = codec::SampleMode::test;
                co.clip_index = ci;
                co.n_clips = C;
                for (std::size_t v = v0; v < v1; ++v) {
                    const auto& item = data.items()[idx[v]];
                    clips.push_back(codec::sample_clip(*item.decoded, co, item.label));
                }
                const Batch b = make_batch(clips);
                const ModelOutput out = model.forward(b.rgb, b.mvr);
                const Tensor* heads[4] = {&out.score, &out.z_rgb, &out.z_mvr, &out.z_fused};
                for (std::size_t h = 0; h < 4; ++h) {
                    if (!heads[h]->defined()) continue;
                    const auto d = heads[h]->data();
                    for (std::size_t v = v0; v < v1; ++v) {
                        const auto row = d.subspan((v - v0) * K, K);
                        logits[h][v][ci].assign(row.begin(), row.end());
                    }
                }
            }
        }
    };

    const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, V);
    if (threads == 1) {
        work(0, V);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t b = V * t / threads, e = V * (t + 1) / threads;
            pool.emplace_back([&, t, b, e] {
                try {
                    work(b, e);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& err : errors) {
            if (err) std::rethrow_exception(err);
        }
    }

    EvalResult r;
    r.count = V;
    for (std::size_t v = 0; v < V; ++v) r.labels.push_back(data.items()[idx[v]].label);
    auto averaged = [&](std::size_t h) {
        std::vector<std::vector<double>> out(V, std::vector<double>(K, 0.0));
        for (std::size_t v = 0; v < V; ++v) {
            for (std::size_t ci = 0; ci < C; ++ci)
                for (std::size_t k = 0; k < K; ++k) out[v][k] += logits[h][v][ci][k];
            for (double& x : out[v]) x /= static_cast<double>(C);
        }
        return out;
    };
    r.scores = averaged(0);
    r.top1 = top1_from_scores(r.scores, r.labels);
    if (model.config().rgb_stream) r.top1_rgb = top1_from_scores(averaged(1), r.labels);
    if (model.config().mvr_stream) r.top1_mvr = top1_from_scores(averaged(2), r.labels);
    if (model.config().cma) r.top1_fused_head = top1_from_scores(averaged(3), r.labels);
    for (std::size_t ci = 0; ci < C; ++ci) {
        std::vector<std::vector<double>> single(V);
        for (std::size_t v = 0; v < V; ++v) single[v] = logits[0][v][ci];
        r.per_clip_top1.push_back(top1_from_scores(single, r.labels));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const Dataset& data, const AblationOptions& opts, std::ostream* progress) {
    if (opts.variants.empty()) throw UsageError("no variants requested");
    if (opts.seeds.empty()) throw UsageError("no seeds requested");
    // Resolve every name before spending time on training.
    std::vector<ModelConfig> configs;
    for (const auto& v : opts.variants) configs.push_back(apply_variant(opts.base, v));

    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        for (std::uint64_t seed : opts.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            ModelConfig mc = configs[i];
            mc.seed = seed;
            mc.num_classes = data.n_classes();
            TwoStreamModel model(mc);
            TrainConfig tc = opts.train;
            tc.seed = seed;
            const TrainResult tr = train(model, data, tc);

            EvalOptions eo;
            eo.n_frames = tc.n_frames;
            eo.crop = tc.crop;
            eo.threads = opts.threads;
            const EvalResult one = evaluate(model, data, Split::test, eo);
            eo.n_clips = 3;
            const EvalResult three = evaluate(model, data, Split::test, eo);

            AblationRow row;
            row.variant = opts.variants[i];
            row.seed = seed;
            row.params = model.parameter_count();
            row.top1 = one.top1;
            row.top1_3clip = three.top1;
            row.top1_rgb = one.top1_rgb;
            row.top1_mvr = one.top1_mvr;
            row.final_loss = tr.epochs.back().train_loss;
            row.seconds = seconds_since(t0);
            if (progress) {
                *progress << "variant=" << row.variant << " seed=" << seed << " top1=" << format_double(row.top1)
                          << " top1_3clip=" << format_double(row.top1_3clip) << " params=" << row.params
                          << " seconds=" << format_double(std::round(row.seconds * 10.0) / 10.0) << '\n'
                          << std::flush;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

std::string ablation_csv_header() {
    return "variant,seed,params,top1,top1_3clip,top1_rgb,top1_mvr,final_loss,seconds";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << ablation_csv_header() << '\n';
    auto opt = [](double v) { return v < 0.0 ? std::string() : format_double(v); };
    for (const auto& r : rows) {
        os << r.variant << ',' << r.seed << ',' << r.params << ',' << format_double(r.top1) << ','
           << format_double(r.top1_3clip) << ',' << opt(r.top1_rgb) << ',' << opt(r.top1_mvr) << ','
           << format_double(r.final_loss) << ',' << format_double(std::round(r.seconds * 1000.0) / 1000.0) << '\n';
    }
    return os.str();
}

}  // namespace cvr::train
