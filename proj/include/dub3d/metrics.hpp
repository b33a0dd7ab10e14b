#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dub3d/manifest.hpp"

namespace dub3d {

struct Prediction {
    std::string id;
    int truth = 0;  // 1 = generated
    int pred = 0;
    double score = 0.0;  // P(generated)
    std::string split;
};

using PredictionSet = std::vector<Prediction>;

void write_predictions(const PredictionSet& preds, const std::filesystem::path& path);
PredictionSet read_predictions(const std::filesystem::path& path);

struct EvalReport {
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;
    double f1_mean = 0.0;
    double f1_std = 0.0;
    std::int64_t repeats = 0;
    std::int64_t per_class = 0;  // clips per class in each balanced draw
};

struct Counts {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};
double accuracy(const Counts& c);
// Positive class = generated; 0 when precision + recall is 0.
double f1_score(const Counts& c);

// Undersamples the majority class without replacement (seed + r for repeat r) to the minority
// size and reports mean and population std of accuracy and F1.
EvalReport balanced_metrics(const PredictionSet& preds, std::int64_t repeats = 10, std::uint64_t seed = 0);
// Same statistic over every majority-class subset of minority size.
EvalReport balanced_metrics_exhaustive(const PredictionSet& preds);

struct GeneratorRow {
    std::string model;
    std::int64_t generated = 0;
    std::optional<EvalReport> report;  // empty with a warning when the model has no clips
    std::string warning;
};

// Each generator's clips against the full real pool of the prediction set.
std::vector<GeneratorRow> per_generator_breakdown(const PredictionSet& preds, const Manifest& manifest,
                                                  std::int64_t repeats = 10, std::uint64_t seed = 0);

nlohmann::json report_to_json(const EvalReport& r);

// Per-class uniform sampling of a manifest, preserving the label ratio.
Manifest subsample_train(const Manifest& manifest, double fraction, std::uint64_t seed);

}  // namespace dub3d
