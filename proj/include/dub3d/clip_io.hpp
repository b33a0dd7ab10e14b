#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dub3d {

// Decoded 8-bit RGB frames, row-major [frames, height, width, 3].
struct RawClip {
    std::int64_t frames = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    double fps = 0.0;
    std::vector<std::uint8_t> rgb;

    std::int64_t frame_bytes() const { return height * width * 3; }
    const std::uint8_t* frame(std::int64_t i) const { return rgb.data() + i * frame_bytes(); }
};

// "RAWV", then u32 N, H, W and f32 fps (little endian), then N*H*W*3 bytes.
void write_rawv(const std::filesystem::path& path, const RawClip& clip);
RawClip read_rawv(const std::filesystem::path& path);

// Directory of numbered image files (e.g. 000001.png). Numbering must be contiguous.
RawClip read_frame_dir(const std::filesystem::path& dir, double fps = 0.0);

struct IngestOptions {
    // Shell command with {input} and {output} tokens; {output} receives a RAWV file.
    std::string decoder;
    double fallback_fps = 0.0;
    // Receives each external command verbatim before it runs.
    std::function<void(const std::string&)> on_command;
};

// Dispatches on the input kind: frame directory, RAWV file, or container via the decoder.
RawClip ingest_external(const std::filesystem::path& path, const IngestOptions& options = {});

// Replaces every {input} and {output} token.
std::string substitute_decoder_template(const std::string& tmpl, const std::string& input, const std::string& output);

}  // namespace dub3d
