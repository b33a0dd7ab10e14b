#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dub3d/clip_io.hpp"
#include "dub3d/manifest.hpp"
#include "dub3d/tensor.hpp"

namespace dub3d {

enum class FakeMode {
    Jitter,      // same textures, per-frame independent displacement
    Appearance,  // coherent motion, blocky texture
};

struct SynthSplit {
    std::string split = "train";
    std::int64_t real = 100;
    std::int64_t fake = 100;
};

struct SynthSpec {
    std::vector<SynthSplit> splits{SynthSplit{}};
    std::int64_t height = 56;
    std::int64_t width = 72;
    std::int64_t frames = 24;
    double fps = 8.0;
    std::int64_t velocity = 1;  // px per frame, real clips
    std::int64_t jitter = 2;    // max |offset| per axis, fake clips
    std::int64_t texture_size = 128;
    std::int64_t block = 4;     // texture block size in appearance mode
    FakeMode fake_mode = FakeMode::Jitter;
    std::string fake_model = "SynthJitter";
    std::string source = "synthetic";
};

void validate_synth_spec(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

// Named generator settings: short edge, fps and clip length of each self-generated source.
struct GeneratorPreset {
    std::string name;
    std::string model;
    std::string method;
    std::int64_t short_edge;
    double fps;
    std::int64_t frames;
};
const std::vector<GeneratorPreset>& generator_presets();
// Spec whose resolution/fps/length follow a named generator preset (16:9 frames).
SynthSpec synth_spec_for_generator(std::string_view preset_name);

struct SynthClip {
    ManifestEntry entry;
    RawClip clip;
};

// Deterministic in `seed`: same spec and seed give bit-identical clips.
std::vector<SynthClip> synth_clips(const SynthSpec& spec, std::uint64_t seed);
// Writes <out>/clips/<id>.rawv and <out>/manifest.jsonl (paths relative to <out>).
Manifest synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace dub3d
