#include "dub3d/train.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <cmath>
#include <random>

#include "dub3d/error.hpp"
#include "dub3d/optim.hpp"

namespace dub3d {

namespace fs = std::filesystem;
using i64 = std::int64_t;

namespace {

enum Stream : std::uint64_t { kInit = 0, kShuffle = 1, kSample = 2, kDropout = 3 };

fs::path manifest_root(const std::string& manifest) {
    const fs::path p(manifest);
    return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

CheckpointHeader make_header(const RunConfig& cfg, std::int64_t step) {
    return {model_name(cfg.model), model_config_hash(cfg.model), step, run_config_to_json(cfg)};
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
    validate_run_config(cfg);
    if (cfg.manifest.empty()) throw ConfigError("manifest", "no manifest path given");
    const Manifest all = load_manifest(cfg.manifest);
    return train_on(cfg, filter_split(all, cfg.train_split), manifest_root(cfg.manifest), options);
}

TrainResult train_on(const RunConfig& cfg, const Manifest& train_entries, const fs::path& root,
                     const TrainOptions& options) {
    validate_run_config(cfg);
    Manifest entries = subsample_train(train_entries, cfg.train_fraction, stream_seed(cfg.seed, kShuffle));
    i64 reals = 0, fakes = 0;
    for (const auto& e : entries) (e.label == Label::Real ? reals : fakes)++;
    if (reals == 0 || fakes == 0) {
        throw DataError("train: split '" + cfg.train_split + "' has " + std::to_string(reals) + " real and " +
                        std::to_string(fakes) + " generated clips; both classes are required");
    }

    const bool previous_strict = strict_nan();
    set_strict_nan(cfg.strict_nan);
    struct Restore {
        bool v;
        ~Restore() { set_strict_nan(v); }
    } restore{previous_strict};

    Dub3dModel model(cfg.model, stream_seed(cfg.seed, kInit));
    ClipDataset data(entries, root, cfg);
    if (options.log) data.set_command_hook([&](const std::string& cmd) { options.log->event("decoder", {{"command", cmd}}); });
    OptimizerState opt = make_optimizer_state(model.store().params(), cfg.weight_decay, cfg.skip_weight_decay);

    const i64 n = static_cast<i64>(data.size());
    const i64 B = std::min<i64>(cfg.batch_size, n);
    const i64 steps_per_epoch = (n + B - 1) / B;
    Rng shuffle_rng(stream_seed(cfg.seed, kShuffle));
    Rng dropout_rng(stream_seed(cfg.seed, kDropout));
    ForwardContext ctx{true, cfg.model.dropout, &dropout_rng};

    if (options.log) {
        options.log->event("train_start", {{"clips", n},
                                            {"real", reals},
                                            {"generated", fakes},
                                            {"batch_size", B},
                                            {"steps_per_epoch", steps_per_epoch},
                                            {"parameters", model.parameter_count()}});
    }

    TrainResult result;
    result.train_clips = n;
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    i64 step = 0;
    bool stop = false;
    for (i64 epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        i64 correct = 0, seen = 0;
        for (i64 b0 = 0; b0 < n && !stop; b0 += B) {
            const i64 bn = std::min(B, n - b0);
            // Samples are built in parallel, each from its own (epoch, position) stream.
            std::vector<Sample> batch(static_cast<std::size_t>(bn));
            parallel_for(static_cast<std::size_t>(bn), [&](std::size_t k) {
                const std::size_t idx = order[static_cast<std::size_t>(b0) + k];
                Rng rng(stream_seed(cfg.seed, kSample + 16 * (static_cast<std::uint64_t>(epoch) * n + b0 + k + 1)));
                batch[k] = data.get(idx, Mode::Train, &rng);
            });
            // Per-sample backward with loss / B accumulates the batch-mean gradient exactly
            // as one batched pass would, at a fraction of the activation memory.
            double loss_sum = 0.0;
            for (i64 k = 0; k < bn; ++k) {
                const Sample& s = batch[k];
                Tensor logits = model.forward({s.clip}, s.flow.defined() ? std::vector<Tensor>{s.flow} : std::vector<Tensor>{},
                                              ctx);
                const int label = s.label;
                Tensor loss = cross_entropy(logits, std::span<const int>(&label, 1));
                loss_sum += loss.item();
                const auto lg = logits.data();
                correct += (lg[1] > lg[0] ? 1 : 0) == label;
                ++seen;
                scale(loss, 1.0 / static_cast<double>(bn)).backward();
            }
            const double lr = lr_schedule(step, steps_per_epoch, cfg.lr);
            adamw_step(opt, lr);
            model.store().zero_grad();
            StepRecord rec{step, epoch, lr, loss_sum / static_cast<double>(bn)};
            if (!std::isfinite(rec.loss)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
            result.steps.push_back(rec);
            if (options.log) {
                options.log->event("step", {{"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr}, {"loss", rec.loss}});
            }
            if (options.on_step) options.on_step(rec);
            ++step;
            if (options.max_steps > 0 && step >= options.max_steps) stop = true;
        }
        result.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(std::max<i64>(1, seen)));
        if (options.log) {
            options.log->event("epoch_end", {{"epoch", epoch}, {"train_accuracy", result.epoch_accuracy.back()}});
        }
        if (options.write_checkpoint && !cfg.output_dir.empty()) {
            std::error_code ec;
            fs::create_directories(cfg.output_dir, ec);
            result.checkpoint = fs::path(cfg.output_dir) / "checkpoint.dub3d";
            save_checkpoint(result.checkpoint, make_header(cfg, step), named_tensors(model.store().params()));
            if (options.log) options.log->event("checkpoint", {{"path", result.checkpoint.string()}, {"step", step}});
        }
    }
    return result;
}

LoadedModel load_model(const fs::path& checkpoint, const std::optional<std::string>& expected) {
    const Checkpoint ck = read_checkpoint(checkpoint);
    LoadedModel out;
    try {
        out.config = run_config_from_json(ck.header.config);
    } catch (const ConfigError& err) {
        throw DataError("checkpoint " + checkpoint.string() + ": stored config invalid: " + err.what());
    }
    out.model = std::make_unique<Dub3dModel>(out.config.model, 0);
    load_checkpoint_into(ck, out.model->store().params(), expected.value_or(model_name(out.config.model)));
    return out;
}

PredictionSet predict(const Dub3dModel& model, const RunConfig& cfg, const Manifest& manifest, const fs::path& root,
                      const std::string& split) {
    if (!is_known_split(split)) throw ConfigError("split", "unknown split '" + split + "'");
    Manifest entries = filter_split(manifest, split);
    RunConfig eval_cfg = cfg;
    eval_cfg.model = model.config();
    ClipDataset data(entries, root, eval_cfg);
    PredictionSet preds(entries.size());
    parallel_for(entries.size(), [&](std::size_t i) {
        NoGradGuard guard;
        Sample s = data.get(i, Mode::Eval, nullptr);
        ForwardContext ctx{false, 0.0, nullptr};
        Tensor logits = model.forward({s.clip}, s.flow.defined() ? std::vector<Tensor>{s.flow} : std::vector<Tensor>{}, ctx);
        Tensor prob = softmax(logits, -1);
        Prediction& p = preds[i];
        p.id = s.id;
        p.truth = s.label;
        p.score = prob.data()[1];
        p.pred = prob.data()[1] > prob.data()[0] ? 1 : 0;
        p.split = split;
    });
    return preds;
}

}  // namespace dub3d
