#include "dub3d/config.hpp"

#include <fstream>
#include <set>

#include "dub3d/checkpoint.hpp"
#include "dub3d/error.hpp"

namespace dub3d {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& prefix, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError(prefix.empty() ? "config" : prefix, "must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError(prefix.empty() ? key : prefix + "." + key, "unknown field");
    }
}

template <typename T>
void read(const json& j, const std::string& prefix, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(prefix + "." + key, "wrong type");
    }
}

}  // namespace

RunConfig desk_run_config(std::string_view preset) {
    RunConfig cfg;
    cfg.model = model_preset(preset, "desk");
    cfg.preprocess.short_edge = 56;
    cfg.preprocess.crop = {56, 56};
    cfg.preprocess.frame_count = cfg.model.frame_count;
    // 60 steps at 1e-4 barely move the loss on a 200-clip set
    cfg.lr = 3e-3;
    cfg.batch_size = 4;
    return cfg;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {{"preset", model_name(cfg)},
            {"variant", std::string(variant_kind(cfg.variant))},
            {"backbone", cfg.backbone},
            {"frame_interval", cfg.frame_interval},
            {"frame_count", cfg.frame_count},
            {"skip_sites", cfg.skip_sites},
            {"fusion_hidden", cfg.fusion_hidden},
            {"dropout", cfg.dropout}};
}

std::string model_config_hash(const ModelConfig& cfg) { return fnv1a_hex(model_config_to_json(cfg).dump()); }

json run_config_to_json(const RunConfig& cfg) {
    const auto& p = cfg.preprocess;
    json pre = {{"short_edge", p.short_edge}, {"crop", p.crop},           {"flip_prob", p.flip_prob},
                {"mean", p.mean},             {"std", p.std},             {"frame_count", p.frame_count},
                {"target_fps", p.target_fps ? json(*p.target_fps) : json(nullptr)}};
    json flow = {{"estimator", cfg.flow.estimator}, {"block", cfg.flow.block},         {"radius", cfg.flow.radius},
                 {"stride", cfg.flow.stride},       {"work_size", cfg.flow.work_size},
                 {"normalization_scale", cfg.flow.normalization_scale}};
    return {{"model", model_config_to_json(cfg.model)},
            {"preprocess", pre},
            {"flow", flow},
            {"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"weight_decay", cfg.weight_decay},
            {"skip_weight_decay", cfg.skip_weight_decay},
            {"epochs", cfg.epochs},
            {"seed", cfg.seed},
            {"manifest", cfg.manifest},
            {"output_dir", cfg.output_dir},
            {"train_split", cfg.train_split},
            {"train_fraction", cfg.train_fraction},
            {"decoder", cfg.decoder},
            {"flow_cache", cfg.flow_cache},
            {"strict_nan", cfg.strict_nan}};
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, "", {"model", "preprocess", "flow", "lr", "batch_size", "weight_decay", "skip_weight_decay",
                           "epochs", "seed", "manifest", "output_dir", "train_split", "train_fraction", "decoder",
                           "flow_cache", "strict_nan"});
    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model", {"preset", "variant", "backbone", "frame_interval", "frame_count", "skip_sites",
                                    "fusion_hidden", "dropout"});
        std::string preset = "ff_fi8";
        std::string backbone = "swin-t";
        read(m, "model", "preset", preset);
        read(m, "model", "backbone", backbone);
        cfg.model = model_preset(preset, backbone);
        if (m.contains("variant") && m.at("variant") != std::string(variant_kind(cfg.model.variant))) {
            throw ConfigError("model.variant", "'" + m.at("variant").dump() + "' disagrees with preset '" + preset + "'");
        }
        read(m, "model", "frame_interval", cfg.model.frame_interval);
        read(m, "model", "frame_count", cfg.model.frame_count);
        read(m, "model", "skip_sites", cfg.model.skip_sites);
        read(m, "model", "fusion_hidden", cfg.model.fusion_hidden);
        read(m, "model", "dropout", cfg.model.dropout);
        // The frame count defaults from the model section.
        cfg.preprocess.frame_count = cfg.model.frame_count;
        if (backbone == "desk") {
            cfg.preprocess.short_edge = 56;
            cfg.preprocess.crop = {56, 56};
            cfg.lr = 3e-3;
            cfg.batch_size = 4;
        }
    }
    if (j.contains("preprocess")) {
        const json& p = j.at("preprocess");
        reject_unknown(p, "preprocess", {"short_edge", "crop", "flip_prob", "mean", "std", "frame_count", "target_fps"});
        read(p, "preprocess", "short_edge", cfg.preprocess.short_edge);
        read(p, "preprocess", "crop", cfg.preprocess.crop);
        read(p, "preprocess", "flip_prob", cfg.preprocess.flip_prob);
        read(p, "preprocess", "mean", cfg.preprocess.mean);
        read(p, "preprocess", "std", cfg.preprocess.std);
        read(p, "preprocess", "frame_count", cfg.preprocess.frame_count);
        if (p.contains("target_fps") && !p.at("target_fps").is_null()) {
            double fps = 0.0;
            read(p, "preprocess", "target_fps", fps);
            cfg.preprocess.target_fps = fps;
        }
    }
    if (j.contains("flow")) {
        const json& f = j.at("flow");
        reject_unknown(f, "flow", {"estimator", "block", "radius", "stride", "work_size", "normalization_scale"});
        read(f, "flow", "estimator", cfg.flow.estimator);
        read(f, "flow", "block", cfg.flow.block);
        read(f, "flow", "radius", cfg.flow.radius);
        read(f, "flow", "stride", cfg.flow.stride);
        read(f, "flow", "work_size", cfg.flow.work_size);
        read(f, "flow", "normalization_scale", cfg.flow.normalization_scale);
    }
    read(j, "", "lr", cfg.lr);
    read(j, "", "batch_size", cfg.batch_size);
    read(j, "", "weight_decay", cfg.weight_decay);
    read(j, "", "skip_weight_decay", cfg.skip_weight_decay);
    read(j, "", "epochs", cfg.epochs);
    read(j, "", "seed", cfg.seed);
    read(j, "", "manifest", cfg.manifest);
    read(j, "", "output_dir", cfg.output_dir);
    read(j, "", "train_split", cfg.train_split);
    read(j, "", "train_fraction", cfg.train_fraction);
    read(j, "", "decoder", cfg.decoder);
    read(j, "", "flow_cache", cfg.flow_cache);
    read(j, "", "strict_nan", cfg.strict_nan);
    validate_run_config(cfg);
    return cfg;
}

void validate_run_config(const RunConfig& cfg) {
    validate_model(cfg.model);
    validate_preprocess(cfg.preprocess);
    validate_flow_config(cfg.flow);
    backbone_preset(cfg.model.backbone);
    if (cfg.preprocess.frame_count != cfg.model.frame_count) {
        throw ConfigError("preprocess.frame_count", "must equal model.frame_count (" +
                                                        std::to_string(cfg.model.frame_count) + ")");
    }
    const auto bb = backbone_preset(cfg.model.backbone);
    if (cfg.preprocess.crop[0] % bb.patch[1] != 0 || cfg.preprocess.crop[1] % bb.patch[2] != 0) {
        throw ConfigError("preprocess.crop", "must be divisible by the backbone patch size");
    }
    if (cfg.model.frame_count < bb.patch[0]) {
        throw ConfigError("model.frame_count", "must be at least the temporal patch size");
    }
    if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
    if (cfg.batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
    if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay", "must be non-negative");
    if (cfg.skip_weight_decay < 0.0) throw ConfigError("skip_weight_decay", "must be non-negative");
    if (cfg.epochs < 1) throw ConfigError("epochs", "must be at least 1");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) {
        throw ConfigError("train_fraction", "must be in (0, 1]");
    }
    if (!is_known_split(cfg.train_split)) throw ConfigError("train_split", "unknown split '" + cfg.train_split + "'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& err) {
        throw ConfigError("config", std::string("invalid JSON in ") + path.string() + " (" + err.what() + ")");
    }
    return run_config_from_json(j);
}

}  // namespace dub3d
