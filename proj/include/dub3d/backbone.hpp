#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dub3d/nn.hpp"

namespace dub3d {

using Dims3 = std::array<std::int64_t, 3>;  // (t, h, w)

struct BackboneConfig {
    std::string name = "swin-t";
    Dims3 patch{2, 4, 4};
    std::int64_t embed_dim = 96;
    std::array<std::int64_t, 4> depths{2, 2, 6, 2};
    std::array<std::int64_t, 4> heads{3, 6, 12, 24};
    Dims3 window{8, 7, 7};
    double mlp_ratio = 4.0;
    std::int64_t input_channels = 3;
};

// Named presets: "swin-t" (the canonical Video Swin-T constants) and "desk".
BackboneConfig backbone_preset(std::string_view name, std::int64_t input_channels = 3);
// Throws ConfigError on an inconsistent configuration.
void validate_backbone(const BackboneConfig& cfg);
// Channel count of stage 1..4.
std::int64_t stage_dim(const BackboneConfig& cfg, int stage);

// Token-grid shapes [T, H, W, C] at the output of stages 1..4 for an N x H x W clip.
std::array<Shape, 4> backbone_stage_shapes(const BackboneConfig& cfg, std::int64_t frames, std::int64_t height,
                                           std::int64_t width);

// Effective window geometry for one token grid. Windows larger than the grid are clamped to it,
// and the shift on a clamped dim is dropped (one window there, so shifting is a relabeling).
struct WindowLayout {
    Dims3 grid{};
    Dims3 window{};
    Dims3 shift{};
    Dims3 padded{};

    std::int64_t num_windows() const;
    std::int64_t window_tokens() const { return window[0] * window[1] * window[2]; }
    bool shifted() const { return shift[0] || shift[1] || shift[2]; }
};

WindowLayout make_window_layout(const Dims3& grid, const Dims3& window, const Dims3& shift);

// [T, H, W, C] -> [num_windows, window_tokens, C]: replicate-pad to a window multiple, roll by
// -shift, then cut into windows in (t, h, w) raster order.
Tensor window_partition(const Tensor& tokens, const WindowLayout& layout);
// Exact inverse of window_partition.
Tensor window_reverse(const Tensor& windows, const WindowLayout& layout);
// Additive mask [num_windows, n, n]: 0 within a region, -1e9 across the cyclic-shift seam.
// Undefined tensor when the layout is unshifted.
Tensor shifted_window_mask(const WindowLayout& layout);
// Flattened n*n indices into a relative-position table sized for `table_window`.
std::vector<std::int64_t> relative_position_index(const Dims3& window, const Dims3& table_window);

class WindowAttention {
public:
    WindowAttention() = default;
    WindowAttention(ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                    const Dims3& table_window);

    // windows: [nW, n, C]. When `weights_out` is set it receives the post-softmax weights
    // [nW, heads, n, n] (before dropout).
    Tensor operator()(const Tensor& windows, const WindowLayout& layout, const Tensor& mask, ForwardContext& ctx,
                      Tensor* weights_out = nullptr) const;

private:
    std::int64_t heads_ = 1;
    Dims3 table_window_{};
    Linear qkv_;
    Linear proj_;
    Tensor bias_table_;
};

class SwinBlock {
public:
    SwinBlock() = default;
    SwinBlock(ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads, const Dims3& window,
              double mlp_ratio);

    // x: [T, H, W, C] -> same shape.
    Tensor operator()(const Tensor& x, bool shifted, ForwardContext& ctx, Tensor* weights_out = nullptr) const;

private:
    Dims3 window_{};
    LayerNorm norm1_;
    WindowAttention attn_;
    LayerNorm norm2_;
    Linear fc1_;
    Linear fc2_;
};

class PatchEmbed3D {
public:
    PatchEmbed3D() = default;
    PatchEmbed3D(ParamStore& store, const std::string& name, const BackboneConfig& cfg);

    // clip: [N, H, W, C_in] -> tokens [ceil(N/pt), H/ph, W/pw, embed_dim].
    Tensor operator()(const Tensor& clip) const;

private:
    Dims3 patch_{};
    std::int64_t in_channels_ = 0;
    Linear proj_;
};

class PatchMerging {
public:
    PatchMerging() = default;
    PatchMerging(ParamStore& store, const std::string& name, std::int64_t dim);

    // [T, H, W, C] -> [T, ceil(H/2), ceil(W/2), 2C]; odd spatial dims are replicate-padded.
    Tensor operator()(const Tensor& x) const;

private:
    LayerNorm norm_;
    Linear reduction_;
};

struct BackboneOutput {
    Tensor tokens;                      // final grid [T, H, W, 8 * embed_dim]
    Tensor pooled;                      // [8 * embed_dim]
    std::vector<Tensor> stage_outputs;  // stages 1..4 when requested
};

// Four-stage hierarchical video transformer. Stage s > 1 begins with a patch merge.
class Backbone {
public:
    Backbone() = default;
    Backbone(ParamStore& store, const std::string& prefix, BackboneConfig cfg);

    const BackboneConfig& config() const { return cfg_; }

    Tensor embed(const Tensor& clip) const;
    Tensor run_stage(int stage, const Tensor& tokens, ForwardContext& ctx) const;
    // Final layer norm followed by a mean over every token.
    Tensor pool(const Tensor& tokens) const;
    BackboneOutput forward(const Tensor& clip, ForwardContext& ctx, bool keep_stages = false) const;

private:
    BackboneConfig cfg_;
    PatchEmbed3D embed_;
    std::array<std::vector<SwinBlock>, 4> blocks_;
    std::array<PatchMerging, 3> merges_;
    LayerNorm norm_;
};

// Mean over all tokens of [T, H, W, C] -> [C].
Tensor global_average_pool(const Tensor& tokens);

}  // namespace dub3d
