#include "dub3d/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dub3d/error.hpp"

namespace dub3d {

namespace fs = std::filesystem;
using i64 = std::int64_t;

namespace {

std::string format_pct(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", pct);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("stats: cannot write " + path.string());
    out << text;
    if (!out) throw DataError("stats: write failed for " + path.string());
}

// Grouped bars per bin, one colour per label.
bool draw_chart(const DistributionReport& report, const fs::path& path) {
    const auto& bins = bin_names(report.dimension);
    const int W = 120 + 110 * static_cast<int>(bins.size()), H = 420, base = 340, top = 50;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    const cv::Scalar colours[] = {cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255)};
    cv::putText(img, dimension_name(report.dimension) + " distribution (% per label)", {20, 30},
                cv::FONT_HERSHEY_SIMPLEX, 0.7, cv::Scalar(0, 0, 0), 2);
    cv::line(img, {60, base}, {W - 20, base}, cv::Scalar(0, 0, 0), 1);
    const int group = 110, bar = 40;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        const int x0 = 70 + static_cast<int>(b) * group;
        for (std::size_t l = 0; l < report.labels.size() && l < 2; ++l) {
            const double pct = report.labels[l].bins[b].pct;
            const int h = static_cast<int>(std::lround(pct / 100.0 * (base - top)));
            const int x = x0 + static_cast<int>(l) * (bar + 4);
            cv::rectangle(img, {x, base - h}, {x + bar, base}, colours[l], cv::FILLED);
        }
        cv::putText(img, bins[b], {x0, base + 22}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
    }
    for (std::size_t l = 0; l < report.labels.size() && l < 2; ++l) {
        const int y = 380;
        const int x = 70 + static_cast<int>(l) * 180;
        cv::rectangle(img, {x, y}, {x + 14, y + 14}, colours[l], cv::FILLED);
        cv::putText(img, report.labels[l].label, {x + 20, y + 13}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1);
    }
    return cv::imwrite(path.string(), img);
}

}  // namespace

std::string dimension_name(Dimension d) {
    switch (d) {
        case Dimension::Resolution: return "resolution";
        case Dimension::Fps: return "fps";
        case Dimension::FrameCount: return "frame_count";
    }
    return "unknown";
}

const std::vector<std::string>& bin_names(Dimension d) {
    static const std::vector<std::string> fps = {"4", "8", "10", "24", "25", "30", "other"};
    static const std::vector<std::string> res = {"256", "320", "512", "576", "720", "other"};
    static const std::vector<std::string> frames = {"1-24", "25-48", "49-72", "73-120", "121+"};
    switch (d) {
        case Dimension::Resolution: return res;
        case Dimension::Fps: return fps;
        case Dimension::FrameCount: return frames;
    }
    return fps;
}

std::string bin_of(Dimension d, const ManifestEntry& e) {
    switch (d) {
        case Dimension::Fps: {
            for (int v : {4, 8, 10, 24, 25, 30}) {
                if (e.fps == static_cast<double>(v)) return std::to_string(v);
            }
            return "other";
        }
        case Dimension::Resolution: {
            const i64 s = std::min(e.width, e.height);
            for (int v : {256, 320, 512, 576, 720}) {
                if (s == v) return std::to_string(v);
            }
            return "other";
        }
        case Dimension::FrameCount: {
            const i64 f = e.frame_count;
            if (f <= 24) return "1-24";
            if (f <= 48) return "25-48";
            if (f <= 72) return "49-72";
            if (f <= 120) return "73-120";
            return "121+";
        }
    }
    return "other";
}

const LabelHistogram* DistributionReport::find(const std::string& label) const {
    for (const auto& l : labels) {
        if (l.label == label) return &l;
    }
    return nullptr;
}

DistributionReport histogram(Dimension d, const Manifest& manifest, std::optional<Label> filter) {
    DistributionReport report;
    report.dimension = d;
    const auto& names = bin_names(d);
    for (Label label : {Label::Real, Label::Generated}) {
        if (filter && *filter != label) continue;
        LabelHistogram h;
        h.label = std::string(label_name(label));
        for (const auto& n : names) h.bins.push_back({n, 0, 0.0});
        for (const auto& e : manifest) {
            if (e.label != label) continue;
            const std::string b = bin_of(d, e);
            const auto it = std::find(names.begin(), names.end(), b);
            h.bins[static_cast<std::size_t>(it - names.begin())].count += e.count;
            h.total += e.count;
            h.max_value = std::max(h.max_value, e.frame_count);
        }
        if (d != Dimension::FrameCount) h.max_value = 0;
        for (auto& bin : h.bins) {
            bin.pct = h.total ? 100.0 * static_cast<double>(bin.count) / static_cast<double>(h.total) : 0.0;
        }
        report.labels.push_back(std::move(h));
    }
    return report;
}

CompositionSummary composition_summary(const Manifest& manifest) {
    std::map<std::tuple<int, std::string, std::string, std::string>, i64> groups;
    CompositionSummary s;
    double seconds = 0.0;
    for (const auto& e : manifest) {
        const bool real = e.label == Label::Real;
        const bool self_generated = e.source.empty() || e.source == "-";
        const std::string method = self_generated ? "Generated" : "Collection";
        groups[{real ? 0 : 1, method, self_generated ? "-" : e.source, e.model.value_or("-")}] += e.count;
        s.total_clips += e.count;
        seconds += static_cast<double>(e.count) * static_cast<double>(e.frame_count) / e.fps;
    }
    for (const auto& [key, count] : groups) {
        const auto& [cat, method, source, model] = key;
        s.rows.push_back({cat == 0 ? "Real Videos" : "AI-Generated Videos", method, source, model, count});
    }
    s.total_hours = seconds / 3600.0;
    return s;
}

std::string report_csv(const DistributionReport& report) {
    std::ostringstream os;
    os << "dimension,bin,label,count,pct\n";
    for (const auto& l : report.labels) {
        for (const auto& b : l.bins) {
            os << dimension_name(report.dimension) << ',' << b.name << ',' << l.label << ',' << b.count << ','
               << format_pct(b.pct) << '\n';
        }
    }
    return os.str();
}

std::string composition_csv(const CompositionSummary& summary) {
    std::ostringstream os;
    os << "category,method,source,model,count\n";
    for (const auto& r : summary.rows) {
        os << r.category << ',' << r.method << ',' << r.source << ',' << r.model << ',' << r.count << '\n';
    }
    char hours[64];
    std::snprintf(hours, sizeof(hours), "%.3f", summary.total_hours);
    os << "total,,,," << summary.total_clips << '\n';
    os << "hours,,,," << hours << '\n';
    return os.str();
}

RenderedFiles render_report(const std::vector<DistributionReport>& reports, const CompositionSummary& summary,
                            const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw DataError("stats: cannot create output dir " + out_dir.string());
    RenderedFiles files;
    for (const auto& r : reports) {
        const fs::path csv = out_dir / (dimension_name(r.dimension) + ".csv");
        write_text(csv, report_csv(r));
        files.csv.push_back(csv);
        const fs::path png = out_dir / (dimension_name(r.dimension) + ".png");
        try {
            if (draw_chart(r, png)) {
                files.images.push_back(png);
            } else {
                files.warnings.push_back("could not write " + png.string());
            }
        } catch (const cv::Exception& err) {
            files.warnings.push_back("chart " + png.string() + ": " + err.what());
        }
    }
    const fs::path comp = out_dir / "composition.csv";
    write_text(comp, composition_csv(summary));
    files.csv.push_back(comp);
    return files;
}

}  // namespace dub3d
