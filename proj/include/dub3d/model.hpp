#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dub3d/backbone.hpp"
#include "dub3d/nn.hpp"

namespace dub3d {

enum class Variant {
    SingleST,
    Union,
    SwapBidirectional,
    SwapSpatialTemporal,
    SwapOpticalFlow,
    SkipConnection,
    FinalFusion,
};

std::string_view variant_kind(Variant v);  // single_st, union, sf_bidirectional, ..., sc, ff

struct ModelConfig {
    Variant variant = Variant::FinalFusion;
    std::int64_t frame_interval = 8;
    std::int64_t frame_count = 16;
    std::vector<int> skip_sites;  // sc only, subset of {1,2,3}
    std::string backbone = "swin-t";
    // Widths of the three fusion linear layers; the last is always 2.
    std::array<std::int64_t, 3> fusion_hidden{512, 128, 2};
    double dropout = 0.25;

    bool uses_flow() const { return variant != Variant::SingleST; }
    bool dual_branch() const { return variant != Variant::SingleST && variant != Variant::Union; }
};

// Preset names as used in configs and checkpoint headers: single_st, union, sf_bidirectional,
// sf_spatial_temporal, sf_optical_flow, sc_l2, sc_l123, ff_fi1, ff_fi4, ff_fi8.
const std::vector<std::string>& model_preset_names();
// Throws ConfigError("model.preset") for an unknown name. Fusion widths follow the backbone.
ModelConfig model_preset(std::string_view preset, std::string_view backbone = "swin-t");
// Default fusion widths for a variant/backbone pair (halved hiddens for one-branch variants).
std::array<std::int64_t, 3> default_fusion_hidden(Variant variant, std::string_view backbone);
// Canonical name of a config: ff_fi<K>, sc_l<sites>, or the variant kind.
std::string model_name(const ModelConfig& cfg);
void validate_model(const ModelConfig& cfg);

// Intermediate values recorded by a forward pass, for wiring tests.
struct ForwardTrace {
    Tensor video_stage_out[4];
    Tensor flow_stage_out[4];
    Tensor video_stage3_input;
    Tensor flow_stage3_input;
    Tensor f_v;
    Tensor f_o;
    Tensor fusion_input;
};

class Dub3dModel {
public:
    Dub3dModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const BackboneConfig& backbone_config() const { return bb_cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    std::int64_t parameter_count() const { return store_.count(); }
    std::int64_t fusion_input_dim() const { return fusion_in_; }

    // One clip [N,H,W,3] and, unless single_st, its padded flow [N,H,W,2] -> fusion input [D].
    Tensor features(const Tensor& clip, const Tensor& flow, ForwardContext& ctx, ForwardTrace* trace = nullptr) const;
    // [B, D] -> logits [B, 2].
    Tensor head(const Tensor& fused, ForwardContext& ctx) const;
    // fuse_final on pooled branch vectors: MLP(f_v ⊕ f_o) -> [2] (ff/sf layout only).
    Tensor fuse_final(const Tensor& f_v, const Tensor& f_o, ForwardContext& ctx) const;
    // Batched forward. `flows` must be empty iff the variant is single_st.
    Tensor forward(const std::vector<Tensor>& clips, const std::vector<Tensor>& flows, ForwardContext& ctx,
                   ForwardTrace* trace = nullptr) const;

private:
    Tensor skip_vector(int site, bool video, const Tensor& stage_out) const;

    ModelConfig cfg_;
    BackboneConfig bb_cfg_;
    ParamStore store_;
    Backbone video_;
    Backbone flow_;
    Linear swap_v_;
    Linear swap_o_;
    std::vector<LayerNorm> skip_norms_;  // per site: video, flow
    Linear fc1_, fc2_, fc3_;
    std::int64_t fusion_in_ = 0;
};

}  // namespace dub3d
