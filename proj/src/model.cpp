#include "dub3d/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dub3d/error.hpp"

namespace dub3d {

namespace {

using i64 = std::int64_t;

bool is_swap(Variant v) {
    return v == Variant::SwapBidirectional || v == Variant::SwapSpatialTemporal || v == Variant::SwapOpticalFlow;
}

}  // namespace

std::string_view variant_kind(Variant v) {
    switch (v) {
        case Variant::SingleST: return "single_st";
        case Variant::Union: return "union";
        case Variant::SwapBidirectional: return "sf_bidirectional";
        case Variant::SwapSpatialTemporal: return "sf_spatial_temporal";
        case Variant::SwapOpticalFlow: return "sf_optical_flow";
        case Variant::SkipConnection: return "sc";
        case Variant::FinalFusion: return "ff";
    }
    return "unknown";
}

const std::vector<std::string>& model_preset_names() {
    static const std::vector<std::string> names = {
        "single_st", "union",  "sf_bidirectional", "sf_spatial_temporal", "sf_optical_flow",
        "sc_l2",     "sc_l123", "ff_fi1",          "ff_fi4",              "ff_fi8",
    };
    return names;
}

std::array<std::int64_t, 3> default_fusion_hidden(Variant variant, std::string_view backbone) {
    const bool one_branch = variant == Variant::SingleST || variant == Variant::Union;
    if (backbone == "desk") return one_branch ? std::array<i64, 3>{85, 32, 2} : std::array<i64, 3>{170, 64, 2};
    return one_branch ? std::array<i64, 3>{256, 64, 2} : std::array<i64, 3>{512, 128, 2};
}

ModelConfig model_preset(std::string_view preset, std::string_view backbone) {
    ModelConfig cfg;
    cfg.backbone = std::string(backbone);
    if (preset == "single_st") {
        cfg.variant = Variant::SingleST;
    } else if (preset == "union") {
        cfg.variant = Variant::Union;
    } else if (preset == "sf_bidirectional") {
        cfg.variant = Variant::SwapBidirectional;
    } else if (preset == "sf_spatial_temporal") {
        cfg.variant = Variant::SwapSpatialTemporal;
    } else if (preset == "sf_optical_flow") {
        cfg.variant = Variant::SwapOpticalFlow;
    } else if (preset.starts_with("sc_l") && preset.size() > 4 &&
               std::all_of(preset.begin() + 4, preset.end(), [](char c) { return c >= '1' && c <= '3'; })) {
        // sc_l2, sc_l123, ...: one digit per skip site
        cfg.variant = Variant::SkipConnection;
        cfg.skip_sites.clear();
        for (char c : preset.substr(4)) cfg.skip_sites.push_back(c - '0');
    } else if (preset.starts_with("ff_fi") && preset.size() > 5 && preset.size() < 9 &&
               std::all_of(preset.begin() + 5, preset.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        // ff_fi<K>; the named presets are K = 1, 4, 8
        cfg.variant = Variant::FinalFusion;
        cfg.frame_interval = std::stoi(std::string(preset.substr(5)));
    } else {
        throw ConfigError("model.preset", "unknown preset '" + std::string(preset) + "'");
    }
    cfg.fusion_hidden = default_fusion_hidden(cfg.variant, backbone);
    return cfg;
}

std::string model_name(const ModelConfig& cfg) {
    if (cfg.variant == Variant::FinalFusion) return "ff_fi" + std::to_string(cfg.frame_interval);
    if (cfg.variant == Variant::SkipConnection) {
        std::string name = "sc_l";
        for (int s : cfg.skip_sites) name += std::to_string(s);
        return name;
    }
    return std::string(variant_kind(cfg.variant));
}

void validate_model(const ModelConfig& cfg) {
    if (cfg.frame_count < 1) throw ConfigError("model.frame_count", "must be positive");
    if (cfg.uses_flow()) {
        if (cfg.frame_interval < 1) throw ConfigError("model.frame_interval", "must be positive");
        if (cfg.frame_interval >= cfg.frame_count) {
            throw ConfigError("model.frame_interval", "K=" + std::to_string(cfg.frame_interval) +
                                                          " must be below N=" + std::to_string(cfg.frame_count));
        }
    }
    if (cfg.variant == Variant::SkipConnection) {
        if (cfg.skip_sites.empty()) throw ConfigError("model.skip_sites", "empty for sc (use variant ff instead)");
        for (std::size_t i = 0; i < cfg.skip_sites.size(); ++i) {
            const int s = cfg.skip_sites[i];
            if (s < 1 || s > 3) throw ConfigError("model.skip_sites", "site " + std::to_string(s) + " not in {1,2,3}");
            if (i > 0 && s <= cfg.skip_sites[i - 1]) {
                throw ConfigError("model.skip_sites", "sites must be strictly increasing");
            }
        }
    } else if (!cfg.skip_sites.empty()) {
        throw ConfigError("model.skip_sites", "only valid for sc variants");
    }
    if (cfg.fusion_hidden[0] < 1 || cfg.fusion_hidden[1] < 1) {
        throw ConfigError("model.fusion_hidden", "widths must be positive");
    }
    if (cfg.fusion_hidden[2] != 2) throw ConfigError("model.fusion_hidden", "last width must be 2");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("model.dropout", "must be in [0, 1)");
}

Dub3dModel::Dub3dModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
    validate_model(cfg_);
    const i64 in_ch = cfg_.variant == Variant::Union ? 5 : 3;
    bb_cfg_ = backbone_preset(cfg_.backbone, in_ch);
    video_ = Backbone(store_, cfg_.variant == Variant::Union ? "union" : "video", bb_cfg_);
    const i64 C = stage_dim(bb_cfg_, 4);
    fusion_in_ = C;
    if (cfg_.dual_branch()) {
        BackboneConfig flow_cfg = bb_cfg_;
        flow_cfg.input_channels = 2;
        flow_ = Backbone(store_, "flow", flow_cfg);
        fusion_in_ = 2 * C;
    }
    if (is_swap(cfg_.variant)) {
        const i64 c2 = stage_dim(bb_cfg_, 2);
        if (cfg_.variant != Variant::SwapOpticalFlow) swap_v_ = Linear(store_, "swap.video", 2 * c2, c2);
        if (cfg_.variant != Variant::SwapSpatialTemporal) swap_o_ = Linear(store_, "swap.flow", 2 * c2, c2);
    }
    for (int s : cfg_.skip_sites) {
        const i64 cs = stage_dim(bb_cfg_, s);
        const std::string base = "skip.stage" + std::to_string(s);
        skip_norms_.emplace_back(store_, base + ".video.norm", cs, DecayGroup::SkipConnection);
        skip_norms_.emplace_back(store_, base + ".flow.norm", cs, DecayGroup::SkipConnection);
        fusion_in_ += 2 * cs;
    }
    fc1_ = Linear(store_, "head.fc1", fusion_in_, cfg_.fusion_hidden[0]);
    fc2_ = Linear(store_, "head.fc2", cfg_.fusion_hidden[0], cfg_.fusion_hidden[1]);
    fc3_ = Linear(store_, "head.fc3", cfg_.fusion_hidden[1], cfg_.fusion_hidden[2]);
}

Tensor Dub3dModel::skip_vector(int site, bool video, const Tensor& stage_out) const {
    std::size_t k = 0;
    while (cfg_.skip_sites[k] != site) ++k;
    return global_average_pool(skip_norms_[2 * k + (video ? 0 : 1)](stage_out));
}

Tensor Dub3dModel::features(const Tensor& clip, const Tensor& flow, ForwardContext& ctx, ForwardTrace* trace) const {
    if (clip.rank() != 4 || clip.dim(3) != 3) {
        throw std::invalid_argument("model: clip must be [N,H,W,3], got " + shape_str(clip.shape()));
    }
    if (cfg_.uses_flow() != flow.defined()) {
        throw std::invalid_argument(std::string("model: variant ") + std::string(variant_kind(cfg_.variant)) +
                                    (cfg_.uses_flow() ? " requires a flow input" : " takes no flow input"));
    }
    if (flow.defined()) {
        const Shape want{clip.dim(0), clip.dim(1), clip.dim(2), 2};
        if (flow.shape() != want) {
            throw std::invalid_argument("model: flow shape " + shape_str(flow.shape()) + " does not match clip " +
                                        shape_str(clip.shape()));
        }
    }

    if (!cfg_.dual_branch()) {
        Tensor input = cfg_.variant == Variant::Union ? concat({clip, flow}, 3) : clip;
        BackboneOutput out = video_.forward(input, ctx, trace != nullptr);
        if (trace) {
            for (int s = 0; s < 4; ++s) trace->video_stage_out[s] = out.stage_outputs[s];
            trace->f_v = out.pooled;
            trace->fusion_input = out.pooled;
        }
        return out.pooled;
    }

    Tensor xv[4];
    Tensor xo[4];
    xv[0] = video_.run_stage(1, video_.embed(clip), ctx);
    xo[0] = flow_.run_stage(1, flow_.embed(flow), ctx);
    xv[1] = video_.run_stage(2, xv[0], ctx);
    xo[1] = flow_.run_stage(2, xo[0], ctx);

    Tensor in_v = xv[1];
    Tensor in_o = xo[1];
    if (is_swap(cfg_.variant)) {
        if (cfg_.variant != Variant::SwapOpticalFlow) in_v = swap_v_(concat({xv[1], xo[1]}, 3));
        if (cfg_.variant != Variant::SwapSpatialTemporal) in_o = swap_o_(concat({xo[1], xv[1]}, 3));
    }
    xv[2] = video_.run_stage(3, in_v, ctx);
    xo[2] = flow_.run_stage(3, in_o, ctx);
    xv[3] = video_.run_stage(4, xv[2], ctx);
    xo[3] = flow_.run_stage(4, xo[2], ctx);

    Tensor f_v = video_.pool(xv[3]);
    Tensor f_o = flow_.pool(xo[3]);
    std::vector<Tensor> parts{f_v, f_o};
    for (int s : cfg_.skip_sites) {
        parts.push_back(skip_vector(s, true, xv[s - 1]));
        parts.push_back(skip_vector(s, false, xo[s - 1]));
    }
    Tensor fused = concat(parts, 0);
    if (trace) {
        for (int s = 0; s < 4; ++s) {
            trace->video_stage_out[s] = xv[s];
            trace->flow_stage_out[s] = xo[s];
        }
        trace->video_stage3_input = in_v;
        trace->flow_stage3_input = in_o;
        trace->f_v = f_v;
        trace->f_o = f_o;
        trace->fusion_input = fused;
    }
    return fused;
}

Tensor Dub3dModel::head(const Tensor& fused, ForwardContext& ctx) const {
    if (fused.rank() != 2 || fused.dim(1) != fusion_in_) {
        throw std::invalid_argument("fusion: expected [B," + std::to_string(fusion_in_) + "], got " +
                                    shape_str(fused.shape()));
    }
    auto drop = [&](const Tensor& x) {
        if (!ctx.training || cfg_.dropout == 0.0) return x;
        if (!ctx.rng) throw std::logic_error("fusion dropout needs an rng in training mode");
        return dropout(x, cfg_.dropout, *ctx.rng, true);
    };
    Tensor h = drop(gelu(fc1_(fused)));
    h = drop(gelu(fc2_(h)));
    return fc3_(h);
}

Tensor Dub3dModel::fuse_final(const Tensor& f_v, const Tensor& f_o, ForwardContext& ctx) const {
    if (f_v.shape() != f_o.shape() || f_v.rank() != 1) {
        throw std::invalid_argument("fuse_final: dim mismatch " + shape_str(f_v.shape()) + " vs " +
                                    shape_str(f_o.shape()));
    }
    Tensor fused = concat({f_v, f_o}, 0);
    return reshape(head(reshape(fused, {1, fused.dim(0)}), ctx), {2});
}

Tensor Dub3dModel::forward(const std::vector<Tensor>& clips, const std::vector<Tensor>& flows, ForwardContext& ctx,
                           ForwardTrace* trace) const {
    if (clips.empty()) throw std::invalid_argument("model: empty batch");
    if (cfg_.uses_flow() ? flows.size() != clips.size() : !flows.empty()) {
        throw std::invalid_argument("model: " + std::to_string(flows.size()) + " flow inputs for " +
                                    std::to_string(clips.size()) + " clips with variant " +
                                    std::string(variant_kind(cfg_.variant)));
    }
    std::vector<Tensor> rows;
    rows.reserve(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        Tensor f = features(clips[i], cfg_.uses_flow() ? flows[i] : Tensor(), ctx, i == 0 ? trace : nullptr);
        rows.push_back(reshape(f, {1, fusion_in_}));
    }
    return head(rows.size() == 1 ? rows[0] : concat(rows, 0), ctx);
}

}  // namespace dub3d
