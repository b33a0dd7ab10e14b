#include "dub3d/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "dub3d/error.hpp"

namespace dub3d {

namespace {

using i64 = std::int64_t;

constexpr double kMaskValue = -1e9;

i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

}  // namespace

BackboneConfig backbone_preset(std::string_view name, std::int64_t input_channels) {
    BackboneConfig cfg;
    if (name == "swin-t") {
        cfg.name = "swin-t";
    } else if (name == "desk") {
        cfg.name = "desk";
        cfg.embed_dim = 32;
        cfg.depths = {1, 1, 2, 1};
        cfg.heads = {2, 2, 4, 4};
    } else {
        throw ConfigError("backbone", "unknown preset '" + std::string(name) + "' (expected swin-t or desk)");
    }
    cfg.input_channels = input_channels;
    validate_backbone(cfg);
    return cfg;
}

void validate_backbone(const BackboneConfig& cfg) {
    for (int i = 0; i < 3; ++i) {
        if (cfg.patch[i] < 1) throw ConfigError("backbone.patch", "must be positive");
        if (cfg.window[i] < 1) throw ConfigError("backbone.window", "must be positive");
    }
    if (cfg.embed_dim < 1) throw ConfigError("backbone.embed_dim", "must be positive");
    if (cfg.input_channels < 1) throw ConfigError("backbone.input_channels", "must be positive");
    if (!(cfg.mlp_ratio > 0.0)) throw ConfigError("backbone.mlp_ratio", "must be positive");
    for (int s = 0; s < 4; ++s) {
        if (cfg.depths[s] < 1) throw ConfigError("backbone.depths", "must be positive");
        if (cfg.heads[s] < 1) throw ConfigError("backbone.heads", "must be positive");
        const i64 dim = cfg.embed_dim << s;
        if (dim % cfg.heads[s] != 0) {
            throw ConfigError("backbone.heads", "stage " + std::to_string(s + 1) + " dim " + std::to_string(dim) +
                                                    " not divisible by " + std::to_string(cfg.heads[s]) + " heads");
        }
    }
}

std::int64_t stage_dim(const BackboneConfig& cfg, int stage) {
    if (stage < 1 || stage > 4) throw std::out_of_range("stage must be in 1..4");
    return cfg.embed_dim << (stage - 1);
}

std::array<Shape, 4> backbone_stage_shapes(const BackboneConfig& cfg, std::int64_t frames, std::int64_t height,
                                           std::int64_t width) {
    std::array<Shape, 4> out;
    i64 t = ceil_div(frames, cfg.patch[0]);
    i64 h = height / cfg.patch[1];
    i64 w = width / cfg.patch[2];
    for (int s = 1; s <= 4; ++s) {
        if (s > 1) {
            h = ceil_div(h, 2);
            w = ceil_div(w, 2);
        }
        out[s - 1] = {t, h, w, stage_dim(cfg, s)};
    }
    return out;
}

std::int64_t WindowLayout::num_windows() const {
    return (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
}

WindowLayout make_window_layout(const Dims3& grid, const Dims3& window, const Dims3& shift) {
    WindowLayout layout;
    layout.grid = grid;
    for (int d = 0; d < 3; ++d) {
        if (grid[d] < 1 || window[d] < 1) throw std::invalid_argument("window layout: dims must be positive");
        if (shift[d] < 0 || shift[d] >= window[d]) {
            throw std::invalid_argument("window layout: shift " + std::to_string(shift[d]) + " not below window " +
                                        std::to_string(window[d]) + " on dim " + std::to_string(d));
        }
        if (grid[d] <= window[d]) {
            layout.window[d] = grid[d];
            layout.shift[d] = 0;
        } else {
            layout.window[d] = window[d];
            layout.shift[d] = shift[d];
        }
        layout.padded[d] = ceil_div(grid[d], layout.window[d]) * layout.window[d];
    }
    return layout;
}

Tensor window_partition(const Tensor& tokens, const WindowLayout& layout) {
    if (tokens.rank() != 4 || tokens.dim(0) != layout.grid[0] || tokens.dim(1) != layout.grid[1] ||
        tokens.dim(2) != layout.grid[2]) {
        throw std::invalid_argument("window_partition: tokens " + shape_str(tokens.shape()) +
                                    " do not match layout grid");
    }
    const i64 C = tokens.dim(3);
    Tensor x = tokens;
    for (int d = 0; d < 3; ++d) {
        x = pad_replicate(x, d, layout.padded[d]);
        if (layout.shift[d]) x = roll(x, d, -layout.shift[d]);
    }
    const auto& p = layout.padded;
    const auto& w = layout.window;
    x = reshape(x, {p[0] / w[0], w[0], p[1] / w[1], w[1], p[2] / w[2], w[2], C});
    x = permute(x, {0, 2, 4, 1, 3, 5, 6});
    return reshape(x, {layout.num_windows(), layout.window_tokens(), C});
}

Tensor window_reverse(const Tensor& windows, const WindowLayout& layout) {
    if (windows.rank() != 3 || windows.dim(0) != layout.num_windows() || windows.dim(1) != layout.window_tokens()) {
        throw std::invalid_argument("window_reverse: windows " + shape_str(windows.shape()) + " do not match layout");
    }
    const i64 C = windows.dim(2);
    const auto& p = layout.padded;
    const auto& w = layout.window;
    Tensor x = reshape(windows, {p[0] / w[0], p[1] / w[1], p[2] / w[2], w[0], w[1], w[2], C});
    x = permute(x, {0, 3, 1, 4, 2, 5, 6});
    x = reshape(x, {p[0], p[1], p[2], C});
    for (int d = 0; d < 3; ++d) {
        if (layout.shift[d]) x = roll(x, d, layout.shift[d]);
        if (layout.padded[d] != layout.grid[d]) x = slice(x, d, 0, layout.grid[d]);
    }
    return x;
}

Tensor shifted_window_mask(const WindowLayout& layout) {
    if (!layout.shifted()) return {};
    // Region label per padded coordinate, in the rolled frame.
    std::array<std::vector<i64>, 3> region;
    for (int d = 0; d < 3; ++d) {
        const i64 P = layout.padded[d];
        const i64 w = layout.window[d];
        const i64 s = layout.shift[d];
        region[d].resize(static_cast<std::size_t>(P));
        for (i64 i = 0; i < P; ++i) {
            if (s == 0 || i < P - w) {
                region[d][i] = 0;
            } else {
                region[d][i] = i < P - s ? 1 : 2;
            }
        }
    }
    const auto& p = layout.padded;
    const auto& w = layout.window;
    const i64 n = layout.window_tokens();
    const i64 nw = layout.num_windows();
    std::vector<i64> labels(static_cast<std::size_t>(nw * n));
    i64 win = 0;
    for (i64 bt = 0; bt < p[0] / w[0]; ++bt) {
        for (i64 bh = 0; bh < p[1] / w[1]; ++bh) {
            for (i64 bw = 0; bw < p[2] / w[2]; ++bw, ++win) {
                i64 k = 0;
                for (i64 t = 0; t < w[0]; ++t) {
                    for (i64 h = 0; h < w[1]; ++h) {
                        for (i64 x = 0; x < w[2]; ++x, ++k) {
                            labels[win * n + k] = region[0][bt * w[0] + t] * 9 + region[1][bh * w[1] + h] * 3 +
                                                  region[2][bw * w[2] + x];
                        }
                    }
                }
            }
        }
    }
    std::vector<double> mask(static_cast<std::size_t>(nw * n * n), 0.0);
    for (i64 b = 0; b < nw; ++b) {
        for (i64 i = 0; i < n; ++i) {
            for (i64 j = 0; j < n; ++j) {
                if (labels[b * n + i] != labels[b * n + j]) mask[(b * n + i) * n + j] = kMaskValue;
            }
        }
    }
    return Tensor::from_data({nw, n, n}, std::move(mask));
}

std::vector<std::int64_t> relative_position_index(const Dims3& window, const Dims3& table_window) {
    for (int d = 0; d < 3; ++d) {
        if (window[d] > table_window[d]) throw std::invalid_argument("relative_position_index: window exceeds table");
    }
    const i64 n = window[0] * window[1] * window[2];
    std::vector<std::array<i64, 3>> coords;
    coords.reserve(static_cast<std::size_t>(n));
    for (i64 t = 0; t < window[0]; ++t) {
        for (i64 h = 0; h < window[1]; ++h) {
            for (i64 w = 0; w < window[2]; ++w) coords.push_back({t, h, w});
        }
    }
    const i64 span_h = 2 * table_window[1] - 1;
    const i64 span_w = 2 * table_window[2] - 1;
    std::vector<i64> index(static_cast<std::size_t>(n * n));
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            const i64 dt = coords[i][0] - coords[j][0] + table_window[0] - 1;
            const i64 dh = coords[i][1] - coords[j][1] + table_window[1] - 1;
            const i64 dw = coords[i][2] - coords[j][2] + table_window[2] - 1;
            index[i * n + j] = (dt * span_h + dh) * span_w + dw;
        }
    }
    return index;
}

WindowAttention::WindowAttention(ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                                 const Dims3& table_window)
    : heads_(heads), table_window_(table_window) {
    qkv_ = Linear(store, name + ".qkv", dim, 3 * dim);
    proj_ = Linear(store, name + ".proj", dim, dim);
    const i64 table = (2 * table_window[0] - 1) * (2 * table_window[1] - 1) * (2 * table_window[2] - 1);
    bias_table_ = store.add(name + ".relative_position_bias_table", {table, heads}, Init::TruncNormal);
}

Tensor WindowAttention::operator()(const Tensor& windows, const WindowLayout& layout, const Tensor& mask,
                                   ForwardContext& ctx, Tensor* weights_out) const {
    const i64 nw = windows.dim(0);
    const i64 n = windows.dim(1);
    const i64 C = windows.dim(2);
    const i64 hd = C / heads_;
    Tensor qkv = qkv_(windows);
    qkv = permute(reshape(qkv, {nw, n, 3, heads_, hd}), {2, 0, 3, 1, 4});
    auto part = [&](i64 k) { return reshape(slice(qkv, 0, k, 1), {nw, heads_, n, hd}); };
    Tensor q = scale(part(0), 1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor k = part(1);
    Tensor v = part(2);

    Tensor scores = matmul(q, transpose(k, -1, -2));
    Tensor bias = index_select(bias_table_, 0, relative_position_index(layout.window, table_window_));
    bias = reshape(permute(bias, {1, 0}), {heads_, n, n});
    scores = add(scores, bias);
    if (mask.defined()) scores = add(scores, reshape(mask, {nw, 1, n, n}));
    Tensor attn = softmax(scores, -1);
    if (weights_out) *weights_out = attn;
    if (ctx.training && ctx.dropout > 0.0) {
        if (!ctx.rng) throw std::logic_error("attention dropout needs an rng in training mode");
        attn = dropout(attn, ctx.dropout, *ctx.rng, true);
    }
    Tensor out = matmul(attn, v);
    out = reshape(permute(out, {0, 2, 1, 3}), {nw, n, C});
    return proj_(out);
}

SwinBlock::SwinBlock(ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                     const Dims3& window, double mlp_ratio)
    : window_(window) {
    norm1_ = LayerNorm(store, name + ".norm1", dim);
    attn_ = WindowAttention(store, name + ".attn", dim, heads, window);
    norm2_ = LayerNorm(store, name + ".norm2", dim);
    const auto hidden = static_cast<i64>(std::llround(static_cast<double>(dim) * mlp_ratio));
    fc1_ = Linear(store, name + ".mlp.fc1", dim, hidden);
    fc2_ = Linear(store, name + ".mlp.fc2", hidden, dim);
}

Tensor SwinBlock::operator()(const Tensor& x, bool shifted, ForwardContext& ctx, Tensor* weights_out) const {
    if (x.rank() != 4) throw std::invalid_argument("swin_block: expected [T,H,W,C], got " + shape_str(x.shape()));
    const Dims3 grid{x.dim(0), x.dim(1), x.dim(2)};
    Dims3 shift{0, 0, 0};
    if (shifted) shift = {window_[0] / 2, window_[1] / 2, window_[2] / 2};
    const WindowLayout layout = make_window_layout(grid, window_, shift);
    Tensor windows = window_partition(norm1_(x), layout);
    Tensor attended = attn_(windows, layout, shifted_window_mask(layout), ctx, weights_out);
    Tensor h = add(x, window_reverse(attended, layout));
    return add(h, fc2_(gelu(fc1_(norm2_(h)))));
}

PatchEmbed3D::PatchEmbed3D(ParamStore& store, const std::string& name, const BackboneConfig& cfg)
    : patch_(cfg.patch), in_channels_(cfg.input_channels) {
    proj_ = Linear(store, name + ".proj", cfg.patch[0] * cfg.patch[1] * cfg.patch[2] * cfg.input_channels,
                   cfg.embed_dim);
}

Tensor PatchEmbed3D::operator()(const Tensor& clip) const {
    if (clip.rank() != 4 || clip.dim(3) != in_channels_) {
        throw std::invalid_argument("patch_embed_3d: expected [N,H,W," + std::to_string(in_channels_) + "], got " +
                                    shape_str(clip.shape()));
    }
    const i64 N = clip.dim(0), H = clip.dim(1), W = clip.dim(2);
    if (N < patch_[0]) {
        throw std::invalid_argument("patch_embed_3d: " + std::to_string(N) + " frames is fewer than temporal patch " +
                                    std::to_string(patch_[0]));
    }
    if (H % patch_[1] != 0 || W % patch_[2] != 0) {
        throw std::invalid_argument("patch_embed_3d: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                                    " not divisible by patch");
    }
    const i64 T = ceil_div(N, patch_[0]);
    Tensor x = pad_replicate(clip, 0, T * patch_[0]);
    x = reshape(x, {T, patch_[0], H / patch_[1], patch_[1], W / patch_[2], patch_[2], in_channels_});
    x = permute(x, {0, 2, 4, 1, 3, 5, 6});
    x = reshape(x, {T, H / patch_[1], W / patch_[2], patch_[0] * patch_[1] * patch_[2] * in_channels_});
    return proj_(x);
}

PatchMerging::PatchMerging(ParamStore& store, const std::string& name, std::int64_t dim) {
    norm_ = LayerNorm(store, name + ".norm", 4 * dim);
    reduction_ = Linear(store, name + ".reduction", 4 * dim, 2 * dim, false);
}

Tensor PatchMerging::operator()(const Tensor& x_in) const {
    if (x_in.rank() != 4) throw std::invalid_argument("patch_merging: expected [T,H,W,C], got " + shape_str(x_in.shape()));
    Tensor x = pad_replicate(x_in, 1, x_in.dim(1) + x_in.dim(1) % 2);
    x = pad_replicate(x, 2, x.dim(2) + x.dim(2) % 2);
    auto strided = [](i64 len, i64 start) {
        std::vector<i64> idx;
        for (i64 i = start; i < len; i += 2) idx.push_back(i);
        return idx;
    };
    const i64 H = x.dim(1), W = x.dim(2);
    Tensor rows_even = index_select(x, 1, strided(H, 0));
    Tensor rows_odd = index_select(x, 1, strided(H, 1));
    Tensor x0 = index_select(rows_even, 2, strided(W, 0));
    Tensor x1 = index_select(rows_odd, 2, strided(W, 0));
    Tensor x2 = index_select(rows_even, 2, strided(W, 1));
    Tensor x3 = index_select(rows_odd, 2, strided(W, 1));
    return reduction_(norm_(concat({x0, x1, x2, x3}, -1)));
}

Backbone::Backbone(ParamStore& store, const std::string& prefix, BackboneConfig cfg) : cfg_(std::move(cfg)) {
    validate_backbone(cfg_);
    embed_ = PatchEmbed3D(store, prefix + ".patch_embed", cfg_);
    for (int s = 1; s <= 4; ++s) {
        const i64 dim = stage_dim(cfg_, s);
        if (s > 1) merges_[s - 2] = PatchMerging(store, prefix + ".stage" + std::to_string(s) + ".merge", dim / 2);
        for (i64 b = 0; b < cfg_.depths[s - 1]; ++b) {
            blocks_[s - 1].emplace_back(store, prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b), dim,
                                        cfg_.heads[s - 1], cfg_.window, cfg_.mlp_ratio);
        }
    }
    norm_ = LayerNorm(store, prefix + ".norm", stage_dim(cfg_, 4));
}

Tensor Backbone::embed(const Tensor& clip) const { return embed_(clip); }

Tensor Backbone::run_stage(int stage, const Tensor& tokens, ForwardContext& ctx) const {
    if (stage < 1 || stage > 4) throw std::out_of_range("run_stage: stage must be in 1..4");
    Tensor x = stage > 1 ? merges_[stage - 2](tokens) : tokens;
    if (x.dim(3) != stage_dim(cfg_, stage)) {
        throw std::invalid_argument("run_stage: stage " + std::to_string(stage) + " expects " +
                                    std::to_string(stage_dim(cfg_, stage)) + " channels, got " + shape_str(x.shape()));
    }
    const auto& blocks = blocks_[stage - 1];
    for (std::size_t b = 0; b < blocks.size(); ++b) x = blocks[b](x, b % 2 == 1, ctx);
    return x;
}

Tensor Backbone::pool(const Tensor& tokens) const { return global_average_pool(norm_(tokens)); }

BackboneOutput Backbone::forward(const Tensor& clip, ForwardContext& ctx, bool keep_stages) const {
    BackboneOutput out;
    Tensor x = embed(clip);
    for (int s = 1; s <= 4; ++s) {
        x = run_stage(s, x, ctx);
        if (keep_stages) out.stage_outputs.push_back(x);
    }
    out.tokens = x;
    out.pooled = pool(x);
    return out;
}

Tensor global_average_pool(const Tensor& tokens) {
    const i64 C = tokens.dim(-1);
    return mean(reshape(tokens, {tokens.numel() / C, C}), 0);
}

}  // namespace dub3d
