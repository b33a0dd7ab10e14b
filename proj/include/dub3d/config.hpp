#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "dub3d/flow.hpp"
#include "dub3d/model.hpp"
#include "dub3d/preprocess.hpp"

namespace dub3d {

struct RunConfig {
    ModelConfig model;
    PreprocessConfig preprocess;
    FlowConfig flow;
    double lr = 1e-4;
    std::int64_t batch_size = 20;
    double weight_decay = 5e-4;
    double skip_weight_decay = 1e-2;
    std::int64_t epochs = 1;
    std::uint64_t seed = 0;
    std::string manifest;
    std::string output_dir;
    std::string train_split = "train";
    double train_fraction = 1.0;
    std::string decoder;     // external decoder command template
    std::string flow_cache;  // optional directory for per-pair flow files
    bool strict_nan = false;
};

// Desk-scale defaults: desk backbone, 16 x 56 x 56 clips, batch 4, lr 3e-3.
RunConfig desk_run_config(std::string_view preset = "ff_fi8");

// Unknown keys and bad values raise ConfigError with the dotted field path.
// "model.preset" seeds the model section; explicit model fields then override it.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);
void validate_run_config(const RunConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
// Hash of the architecture-defining part of the config, recorded in checkpoints.
std::string model_config_hash(const ModelConfig& cfg);

}  // namespace dub3d
