#include "dub3d/synth.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "dub3d/error.hpp"

namespace dub3d {

namespace fs = std::filesystem;
using nlohmann::json;
using i64 = std::int64_t;

namespace {

constexpr std::array<std::array<i64, 2>, 4> kDirections{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};  // (dx, dy)

std::vector<std::uint8_t> make_texture(const SynthSpec& spec, bool blocky, Rng& rng) {
    const i64 S = spec.texture_size;
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<std::uint8_t> tex(static_cast<std::size_t>(S * S * 3));
    if (!blocky) {
        for (auto& v : tex) v = static_cast<std::uint8_t>(byte(rng));
        return tex;
    }
    const i64 b = spec.block;
    const i64 cells = S / b;
    std::vector<std::uint8_t> coarse(static_cast<std::size_t>(cells * cells * 3));
    for (auto& v : coarse) v = static_cast<std::uint8_t>(byte(rng));
    for (i64 y = 0; y < S; ++y) {
        for (i64 x = 0; x < S; ++x) {
            for (int c = 0; c < 3; ++c) tex[(y * S + x) * 3 + c] = coarse[((y / b) * cells + x / b) * 3 + c];
        }
    }
    return tex;
}

i64 wrap(i64 v, i64 n) { return ((v % n) + n) % n; }

// Frame t shows the texture window whose top-left corner is (px[t], py[t]).
RawClip render(const SynthSpec& spec, const std::vector<std::uint8_t>& tex, const std::vector<i64>& px,
               const std::vector<i64>& py) {
    const i64 S = spec.texture_size;
    RawClip clip;
    clip.frames = spec.frames;
    clip.height = spec.height;
    clip.width = spec.width;
    clip.fps = spec.fps;
    clip.rgb.resize(static_cast<std::size_t>(clip.frames * clip.frame_bytes()));
    std::uint8_t* dst = clip.rgb.data();
    for (i64 t = 0; t < spec.frames; ++t) {
        for (i64 y = 0; y < spec.height; ++y) {
            const i64 ty = wrap(py[t] + y, S);
            for (i64 x = 0; x < spec.width; ++x) {
                const std::uint8_t* src = &tex[(ty * S + wrap(px[t] + x, S)) * 3];
                *dst++ = src[0];
                *dst++ = src[1];
                *dst++ = src[2];
            }
        }
    }
    return clip;
}

std::string clip_id(const std::string& split, bool real, i64 index) {
    std::ostringstream os;
    os << "synth_" << split << '_' << (real ? "real" : "fake") << '_' << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

}  // namespace

void validate_synth_spec(const SynthSpec& spec) {
    if (spec.splits.empty()) throw ConfigError("synth.splits", "at least one split is required");
    for (const auto& s : spec.splits) {
        if (!is_known_split(s.split)) throw ConfigError("synth.splits", "unknown split '" + s.split + "'");
        if (s.real < 0 || s.fake < 0) throw ConfigError("synth.splits", "counts must be non-negative");
    }
    if (spec.height < 1 || spec.width < 1) throw ConfigError("synth.height", "resolution must be positive");
    if (spec.frames < 1) throw ConfigError("synth.frames", "must be positive");
    if (!(spec.fps > 0.0)) throw ConfigError("synth.fps", "must be positive");
    if (spec.velocity < 0) throw ConfigError("synth.velocity", "must be non-negative");
    if (spec.jitter < 0) throw ConfigError("synth.jitter", "must be non-negative");
    if (spec.texture_size < std::max(spec.height, spec.width)) {
        throw ConfigError("synth.texture_size", "must be at least the frame size");
    }
    if (spec.block < 1 || spec.texture_size % spec.block != 0) {
        throw ConfigError("synth.block", "must divide synth.texture_size");
    }
    if (spec.fake_model.empty()) throw ConfigError("synth.fake_model", "must not be empty");
}

SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec spec;
    if (!j.is_object()) throw ConfigError("synth", "spec must be a JSON object");
    if (j.contains("preset")) spec = synth_spec_for_generator(j.at("preset").get<std::string>());
    auto read = [&](const char* key, auto& dst) {
        if (!j.contains(key)) return;
        try {
            dst = j.at(key).get<std::decay_t<decltype(dst)>>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("synth.") + key, "wrong type");
        }
    };
    static const std::set<std::string> known = {"preset", "splits", "real", "fake", "height", "width", "frames",
                                                "fps", "velocity", "jitter", "texture_size", "block", "fake_mode",
                                                "fake_model", "source"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("synth." + key, "unknown field");
    }
    if (j.contains("splits")) {
        spec.splits.clear();
        for (const auto& s : j.at("splits")) {
            SynthSplit split;
            split.split = s.value("split", std::string("train"));
            split.real = s.value("real", std::int64_t{0});
            split.fake = s.value("fake", std::int64_t{0});
            spec.splits.push_back(split);
        }
    } else if (j.contains("real") || j.contains("fake")) {
        spec.splits = {SynthSplit{"train", j.value("real", std::int64_t{0}), j.value("fake", std::int64_t{0})}};
    }
    read("height", spec.height);
    read("width", spec.width);
    read("frames", spec.frames);
    read("fps", spec.fps);
    read("velocity", spec.velocity);
    read("jitter", spec.jitter);
    read("texture_size", spec.texture_size);
    read("block", spec.block);
    read("fake_model", spec.fake_model);
    read("source", spec.source);
    if (j.contains("fake_mode")) {
        const auto mode = j.at("fake_mode").get<std::string>();
        if (mode == "jitter") {
            spec.fake_mode = FakeMode::Jitter;
        } else if (mode == "appearance") {
            spec.fake_mode = FakeMode::Appearance;
        } else {
            throw ConfigError("synth.fake_mode", "expected jitter or appearance, got '" + mode + "'");
        }
    }
    validate_synth_spec(spec);
    return spec;
}

json synth_spec_to_json(const SynthSpec& spec) {
    json splits = json::array();
    for (const auto& s : spec.splits) splits.push_back({{"split", s.split}, {"real", s.real}, {"fake", s.fake}});
    return {{"splits", splits},
            {"height", spec.height},
            {"width", spec.width},
            {"frames", spec.frames},
            {"fps", spec.fps},
            {"velocity", spec.velocity},
            {"jitter", spec.jitter},
            {"texture_size", spec.texture_size},
            {"block", spec.block},
            {"fake_mode", spec.fake_mode == FakeMode::Jitter ? "jitter" : "appearance"},
            {"fake_model", spec.fake_model},
            {"source", spec.source}};
}

const std::vector<GeneratorPreset>& generator_presets() {
    static const std::vector<GeneratorPreset> presets = {
        {"open_sora_256", "Open-Sora", "Text-to-Video", 256, 8.0, 16},
        {"open_sora_512", "Open-Sora", "Text-to-Video", 512, 8.0, 16},
        {"open_sora_plan", "Open-Sora-Plan", "Text-to-Video", 256, 24.0, 65},
        {"streaming_t2v", "StreamingT2V", "Text-to-Video", 720, 10.0, 24},
        {"dynamicrafter", "DynamiCrafter", "Image-to-Video", 256, 8.0, 16},
    };
    return presets;
}

SynthSpec synth_spec_for_generator(std::string_view preset_name) {
    for (const auto& p : generator_presets()) {
        if (p.name != preset_name) continue;
        SynthSpec spec;
        spec.height = p.short_edge;
        spec.width = (p.short_edge * 16 / 9 + 1) / 2 * 2;
        spec.fps = p.fps;
        spec.frames = p.frames;
        spec.fake_model = p.model;
        spec.texture_size = ((spec.width + 127) / 128) * 128;
        return spec;
    }
    throw ConfigError("synth.preset", "unknown generator preset '" + std::string(preset_name) + "'");
}

std::vector<SynthClip> synth_clips(const SynthSpec& spec, std::uint64_t seed) {
    validate_synth_spec(spec);
    Rng rng(seed);
    std::vector<SynthClip> out;
    const i64 S = spec.texture_size;
    for (const auto& split : spec.splits) {
        for (int real = 1; real >= 0; --real) {
            const i64 count = real ? split.real : split.fake;
            for (i64 i = 0; i < count; ++i) {
                const bool coherent = real || spec.fake_mode == FakeMode::Appearance;
                const auto tex = make_texture(spec, !real && spec.fake_mode == FakeMode::Appearance, rng);
                const i64 x0 = std::uniform_int_distribution<i64>(0, S - 1)(rng);
                const i64 y0 = std::uniform_int_distribution<i64>(0, S - 1)(rng);
                std::vector<i64> px(static_cast<std::size_t>(spec.frames)), py(px.size());
                if (coherent) {
                    const auto dir = kDirections[std::uniform_int_distribution<int>(0, 3)(rng)];
                    // Content moving by +d means the window slides by -d over the texture.
                    for (i64 t = 0; t < spec.frames; ++t) {
                        px[t] = x0 - dir[0] * spec.velocity * t;
                        py[t] = y0 - dir[1] * spec.velocity * t;
                    }
                } else {
                    std::uniform_int_distribution<i64> jit(-spec.jitter, spec.jitter);
                    for (i64 t = 0; t < spec.frames; ++t) {
                        px[t] = x0 + jit(rng);
                        py[t] = y0 + jit(rng);
                    }
                }
                SynthClip item;
                item.clip = render(spec, tex, px, py);
                auto& e = item.entry;
                e.id = clip_id(split.split, real, i);
                e.path = "clips/" + e.id + ".rawv";
                e.label = real ? Label::Real : Label::Generated;
                e.source = spec.source;
                if (!real) e.model = spec.fake_model;
                e.fps = spec.fps;
                e.width = spec.width;
                e.height = spec.height;
                e.frame_count = spec.frames;
                e.split = split.split;
                out.push_back(std::move(item));
            }
        }
    }
    return out;
}

Manifest synth_dataset(const SynthSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
    auto clips = synth_clips(spec, seed);
    std::error_code ec;
    fs::create_directories(out_dir / "clips", ec);
    if (ec) throw DataError("synth: cannot create " + (out_dir / "clips").string() + ": " + ec.message());
    Manifest manifest;
    for (auto& item : clips) {
        write_rawv(out_dir / item.entry.path, item.clip);
        manifest.push_back(std::move(item.entry));
    }
    write_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

}  // namespace dub3d
