#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dub3d/checkpoint.hpp"
#include "dub3d/config.hpp"
#include "dub3d/dataset.hpp"
#include "dub3d/metrics.hpp"
#include "dub3d/model.hpp"
#include "dub3d/run_log.hpp"

namespace dub3d {

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_accuracy;  // running train-mode accuracy per epoch
    std::filesystem::path checkpoint;
    std::int64_t train_clips = 0;
};

struct TrainOptions {
    RunLog* log = nullptr;
    // Stop after this many optimizer steps (0 = run every epoch); for determinism probes.
    std::int64_t max_steps = 0;
    bool write_checkpoint = true;
    // Receives every step as it completes.
    std::function<void(const StepRecord&)> on_step;
};

// Derived seed for an independent RNG stream of a run.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

// Trains cfg.model on the train split of cfg.manifest. Rejects a single-class split before the
// first step. Writes <output_dir>/checkpoint.dub3d at each epoch end.
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});
// Same, on entries already loaded (paths resolved against `root`).
TrainResult train_on(const RunConfig& cfg, const Manifest& train_entries, const std::filesystem::path& root,
                     const TrainOptions& options = {});

CheckpointHeader make_header(const RunConfig& cfg, std::int64_t step);

// Builds the model described by a checkpoint's header and loads its weights. When `expected`
// is set, the header variant must match it.
struct LoadedModel {
    RunConfig config;
    std::unique_ptr<Dub3dModel> model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, const std::optional<std::string>& expected = {});

// Eval-mode prediction over every clip of `split`, in manifest order.
PredictionSet predict(const Dub3dModel& model, const RunConfig& cfg, const Manifest& manifest,
                      const std::filesystem::path& root, const std::string& split);

}  // namespace dub3d
