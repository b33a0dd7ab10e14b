#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dub3d/clip_io.hpp"
#include "dub3d/manifest.hpp"
#include "dub3d/tensor.hpp"

namespace dub3d {

enum class Mode { Train, Eval };

struct PreprocessConfig {
    std::int64_t short_edge = 224;
    std::array<std::int64_t, 2> crop{224, 224};  // (height, width)
    double flip_prob = 0.5;                      // train mode only
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
    std::int64_t frame_count = 16;
    std::optional<double> target_fps;
};

// Throws ConfigError on crop > short_edge, flip_prob outside [0, 1], and similar.
void validate_preprocess(const PreprocessConfig& cfg);

inline constexpr std::int64_t kMinFrameSide = 32;

// stride = max(1, round(native / target)) when a target is set, else 1.
std::int64_t frame_stride(double native_fps, std::optional<double> target_fps);

// N frame indices i0, i0+stride, ...; indices past the end wrap around. Train mode draws i0
// uniformly from the offsets that keep the window inside the clip (0 when none do); eval uses 0.
std::vector<std::int64_t> sample_frames(std::int64_t frame_count, double native_fps, std::int64_t frames,
                                        std::optional<double> target_fps, Mode mode, Rng* rng = nullptr);
std::vector<std::int64_t> sample_frames(const ManifestEntry& entry, std::int64_t frames,
                                        std::optional<double> target_fps, Mode mode, Rng* rng = nullptr);

// Output size of the short-edge resize for an h x w frame: (new_h, new_w).
std::array<std::int64_t, 2> resized_dims(std::int64_t height, std::int64_t width, std::int64_t short_edge);

// Bilinear short-edge resize, centre crop, optional horizontal flip, scale to [0, 1] and
// per-channel normalisation. Selected frames of `raw` -> [indices.size(), crop_h, crop_w, 3].
// In train mode one flip decision is drawn per clip (no draw when flip_prob is 0).
Tensor preprocess_clip(const RawClip& raw, const std::vector<std::int64_t>& indices, const PreprocessConfig& cfg,
                       Mode mode, Rng* rng = nullptr, bool* flipped = nullptr);

// Same, with the flip decided by the caller.
Tensor preprocess_frames(const RawClip& raw, const std::vector<std::int64_t>& indices, const PreprocessConfig& cfg,
                         bool flip);

}  // namespace dub3d
