#include "dub3d/preprocess.hpp"

#include <cmath>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "dub3d/error.hpp"

namespace dub3d {

using i64 = std::int64_t;

void validate_preprocess(const PreprocessConfig& cfg) {
    if (cfg.short_edge < kMinFrameSide) {
        throw ConfigError("preprocess.short_edge", "must be at least " + std::to_string(kMinFrameSide));
    }
    if (cfg.crop[0] < 1 || cfg.crop[1] < 1) throw ConfigError("preprocess.crop", "must be positive");
    if (cfg.crop[0] > cfg.short_edge || cfg.crop[1] > cfg.short_edge) {
        throw ConfigError("preprocess.crop", "must not exceed preprocess.short_edge");
    }
    if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob <= 1.0)) throw ConfigError("preprocess.flip_prob", "must be in [0, 1]");
    for (double s : cfg.std) {
        if (!(s > 0.0)) throw ConfigError("preprocess.std", "must be positive");
    }
    if (cfg.frame_count < 1) throw ConfigError("preprocess.frame_count", "must be positive");
    if (cfg.target_fps && !(*cfg.target_fps > 0.0)) throw ConfigError("preprocess.target_fps", "must be positive");
}

std::int64_t frame_stride(double native_fps, std::optional<double> target_fps) {
    if (!target_fps) return 1;
    return std::max<i64>(1, std::llround(native_fps / *target_fps));
}

std::vector<std::int64_t> sample_frames(std::int64_t frame_count, double native_fps, std::int64_t frames,
                                        std::optional<double> target_fps, Mode mode, Rng* rng) {
    if (frames < 1) throw std::invalid_argument("sample_frames: N must be at least 1");
    if (frame_count < 1) throw std::invalid_argument("sample_frames: clip has no frames");
    const i64 stride = frame_stride(native_fps, target_fps);
    i64 offset = 0;
    if (mode == Mode::Train) {
        if (!rng) throw std::invalid_argument("sample_frames: train mode needs an rng");
        const i64 span = (frames - 1) * stride + 1;
        const i64 max_offset = std::max<i64>(0, frame_count - span);
        offset = std::uniform_int_distribution<i64>(0, max_offset)(*rng);
    }
    std::vector<i64> idx(static_cast<std::size_t>(frames));
    for (i64 i = 0; i < frames; ++i) idx[i] = (offset + i * stride) % frame_count;
    return idx;
}

std::vector<std::int64_t> sample_frames(const ManifestEntry& entry, std::int64_t frames,
                                        std::optional<double> target_fps, Mode mode, Rng* rng) {
    return sample_frames(entry.frame_count, entry.fps, frames, target_fps, mode, rng);
}

std::array<std::int64_t, 2> resized_dims(std::int64_t height, std::int64_t width, std::int64_t short_edge) {
    if (height <= width) {
        return {short_edge, std::llround(static_cast<double>(width) * short_edge / static_cast<double>(height))};
    }
    return {std::llround(static_cast<double>(height) * short_edge / static_cast<double>(width)), short_edge};
}

Tensor preprocess_frames(const RawClip& raw, const std::vector<std::int64_t>& indices, const PreprocessConfig& cfg,
                         bool flip) {
    if (raw.height < kMinFrameSide || raw.width < kMinFrameSide) {
        throw DataError("preprocess: frame " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                        " is smaller than " + std::to_string(kMinFrameSide) + " px");
    }
    const auto [rh, rw] = resized_dims(raw.height, raw.width, cfg.short_edge);
    const i64 ch = cfg.crop[0], cw = cfg.crop[1];
    if (ch > rh || cw > rw) throw ConfigError("preprocess.crop", "larger than the resized frame");
    const i64 top = (rh - ch) / 2, left = (rw - cw) / 2;
    const i64 n = static_cast<i64>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(n * ch * cw * 3));
    cv::Mat resized;
    for (i64 k = 0; k < n; ++k) {
        const i64 fi = indices[k];
        if (fi < 0 || fi >= raw.frames) throw DataError("preprocess: frame index " + std::to_string(fi) + " out of range");
        cv::Mat src(static_cast<int>(raw.height), static_cast<int>(raw.width), CV_8UC3,
                    const_cast<std::uint8_t*>(raw.frame(fi)));
        cv::Mat as_float;
        src.convertTo(as_float, CV_32FC3, 1.0 / 255.0);
        if (rh == raw.height && rw == raw.width) {
            resized = as_float;
        } else {
            cv::resize(as_float, resized, cv::Size(static_cast<int>(rw), static_cast<int>(rh)), 0, 0, cv::INTER_LINEAR);
        }
        double* dst = out.data() + k * ch * cw * 3;
        for (i64 y = 0; y < ch; ++y) {
            const float* row = resized.ptr<float>(static_cast<int>(top + y));
            for (i64 x = 0; x < cw; ++x) {
                const i64 sx = left + (flip ? cw - 1 - x : x);
                for (int c = 0; c < 3; ++c) {
                    dst[(y * cw + x) * 3 + c] = (static_cast<double>(row[sx * 3 + c]) - cfg.mean[c]) / cfg.std[c];
                }
            }
        }
    }
    return Tensor::from_data({n, ch, cw, 3}, std::move(out));
}

Tensor preprocess_clip(const RawClip& raw, const std::vector<std::int64_t>& indices, const PreprocessConfig& cfg,
                       Mode mode, Rng* rng, bool* flipped) {
    bool flip = false;
    if (mode == Mode::Train && cfg.flip_prob > 0.0) {
        if (!rng) throw std::invalid_argument("preprocess_clip: train mode with flips needs an rng");
        flip = std::uniform_real_distribution<double>(0.0, 1.0)(*rng) < cfg.flip_prob;
    }
    if (flipped) *flipped = flip;
    return preprocess_frames(raw, indices, cfg, flip);
}

}  // namespace dub3d
