#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dub3d/manifest.hpp"

namespace dub3d {

struct CompositionRow {
    std::string category;  // "Real Videos" or "AI-Generated Videos"
    std::string method;    // "Collection" or "Generated"
    std::string source;    // "-" when absent
    std::string model;     // "-" for real clips
    std::int64_t count = 0;
};

struct CompositionSummary {
    std::vector<CompositionRow> rows;  // sorted by category, method, source, model
    std::int64_t total_clips = 0;
    double total_hours = 0.0;
};

CompositionSummary composition_summary(const Manifest& manifest);

enum class Dimension { Resolution, Fps, FrameCount };
std::string dimension_name(Dimension d);

struct HistogramBin {
    std::string name;
    std::int64_t count = 0;
    double pct = 0.0;
};

struct LabelHistogram {
    std::string label;  // "real" / "generated"
    std::vector<HistogramBin> bins;
    std::int64_t total = 0;
    std::int64_t max_value = 0;  // frame-count reports only
};

struct DistributionReport {
    Dimension dimension = Dimension::Fps;
    std::vector<LabelHistogram> labels;

    const LabelHistogram* find(const std::string& label) const;
};

// Bin names in order. fps: exact match on 4/8/10/24/25/30; resolution: short edge on
// 256/320/512/576/720; frame count: [1,24] [25,48] [49,72] [73,120] [121,inf). Each has "other"
// where applicable.
const std::vector<std::string>& bin_names(Dimension d);
std::string bin_of(Dimension d, const ManifestEntry& e);

// Histograms per label present in `filter` (default both labels), counting `count` per entry.
DistributionReport histogram(Dimension d, const Manifest& manifest, std::optional<Label> filter = std::nullopt);
inline DistributionReport fps_histogram(const Manifest& m, std::optional<Label> f = std::nullopt) {
    return histogram(Dimension::Fps, m, f);
}
inline DistributionReport resolution_histogram(const Manifest& m, std::optional<Label> f = std::nullopt) {
    return histogram(Dimension::Resolution, m, f);
}
inline DistributionReport frame_count_histogram(const Manifest& m, std::optional<Label> f = std::nullopt) {
    return histogram(Dimension::FrameCount, m, f);
}

// CSV "dimension,bin,label,count,pct" text for one report.
std::string report_csv(const DistributionReport& report);
std::string composition_csv(const CompositionSummary& summary);

struct RenderedFiles {
    std::vector<std::filesystem::path> csv;
    std::vector<std::filesystem::path> images;
    std::vector<std::string> warnings;  // image failures; CSVs are the contract
};

// <out>/<dimension>.csv and <out>/<dimension>.png per report, plus composition.csv.
RenderedFiles render_report(const std::vector<DistributionReport>& reports, const CompositionSummary& summary,
                            const std::filesystem::path& out_dir);

}  // namespace dub3d
