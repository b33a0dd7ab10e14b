#include "dub3d/clip_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dub3d/error.hpp"

namespace dub3d {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "RAWV IO assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'A', 'W', 'V'};

bool has_rawv_magic(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    char buf[4] = {};
    return in.read(buf, 4) && std::memcmp(buf, kMagic, 4) == 0;
}

bool is_image_ext(std::string ext) {
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm" || ext == ".pgm" ||
           ext == ".tif" || ext == ".tiff" || ext == ".webp";
}

}  // namespace

void write_rawv(const fs::path& path, const RawClip& clip) {
    if (clip.frames < 1 || clip.height < 1 || clip.width < 1) throw DataError("rawv: empty clip");
    if (static_cast<std::int64_t>(clip.rgb.size()) != clip.frames * clip.frame_bytes()) {
        throw DataError("rawv: pixel buffer size does not match dims");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("rawv: cannot write " + path.string());
    const std::array<std::uint32_t, 3> dims{static_cast<std::uint32_t>(clip.frames),
                                            static_cast<std::uint32_t>(clip.height),
                                            static_cast<std::uint32_t>(clip.width)};
    const float fps = static_cast<float>(clip.fps);
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(dims.data()), sizeof(dims));
    out.write(reinterpret_cast<const char*>(&fps), sizeof(fps));
    out.write(reinterpret_cast<const char*>(clip.rgb.data()), static_cast<std::streamsize>(clip.rgb.size()));
    if (!out) throw DataError("rawv: write failed for " + path.string());
}

RawClip read_rawv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("rawv: cannot open " + path.string());
    char magic[4];
    std::array<std::uint32_t, 3> dims{};
    float fps = 0.0f;
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError("rawv: bad magic in " + path.string());
    if (!in.read(reinterpret_cast<char*>(dims.data()), sizeof(dims)) ||
        !in.read(reinterpret_cast<char*>(&fps), sizeof(fps))) {
        throw DataError("rawv: truncated header in " + path.string());
    }
    RawClip clip;
    clip.frames = dims[0];
    clip.height = dims[1];
    clip.width = dims[2];
    clip.fps = fps;
    if (clip.frames < 1 || clip.height < 1 || clip.width < 1) throw DataError("rawv: zero dimension in " + path.string());
    clip.rgb.resize(static_cast<std::size_t>(clip.frames * clip.frame_bytes()));
    if (!in.read(reinterpret_cast<char*>(clip.rgb.data()), static_cast<std::streamsize>(clip.rgb.size()))) {
        throw DataError("rawv: truncated pixel data in " + path.string());
    }
    return clip;
}

RawClip read_frame_dir(const fs::path& dir, double fps) {
    if (!fs::is_directory(dir)) throw DataError("frame dir: not a directory: " + dir.string());
    std::map<std::int64_t, fs::path> numbered;
    for (const auto& item : fs::directory_iterator(dir)) {
        if (!item.is_regular_file() || !is_image_ext(item.path().extension().string())) continue;
        const std::string stem = item.path().stem().string();
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); })) {
            continue;
        }
        const auto index = std::stoll(stem);
        if (!numbered.emplace(index, item.path()).second) {
            throw DataError("frame dir: index " + std::to_string(index) + " appears twice in " + dir.string());
        }
    }
    if (numbered.empty()) throw DataError("frame dir: no numbered image frames in " + dir.string());
    const std::int64_t first = numbered.begin()->first;
    const std::int64_t last = numbered.rbegin()->first;
    if (last - first + 1 != static_cast<std::int64_t>(numbered.size())) {
        std::string missing;
        int listed = 0;
        for (std::int64_t i = first; i <= last && listed < 20; ++i) {
            if (!numbered.contains(i)) {
                missing += (listed++ ? ", " : "") + std::to_string(i);
            }
        }
        throw DataError("frame dir: numbering has gaps in " + dir.string() + "; missing " + missing);
    }
    RawClip clip;
    clip.fps = fps;
    for (const auto& [index, file] : numbered) {
        cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw DataError("frame dir: cannot decode " + file.string());
        if (clip.frames == 0) {
            clip.height = bgr.rows;
            clip.width = bgr.cols;
        } else if (bgr.rows != clip.height || bgr.cols != clip.width) {
            throw DataError("frame dir: frame " + file.filename().string() + " size differs from the first frame");
        }
        cv::Mat rgb;
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        if (!rgb.isContinuous()) rgb = rgb.clone();
        clip.rgb.insert(clip.rgb.end(), rgb.data, rgb.data + rgb.total() * 3);
        ++clip.frames;
    }
    return clip;
}

std::string substitute_decoder_template(const std::string& tmpl, const std::string& input, const std::string& output) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl.compare(i, 7, "{input}") == 0) {
            out += input;
            i += 7;
        } else if (tmpl.compare(i, 8, "{output}") == 0) {
            out += output;
            i += 8;
        } else {
            out += tmpl[i++];
        }
    }
    return out;
}

RawClip ingest_external(const fs::path& path, const IngestOptions& options) {
    if (fs::is_directory(path)) return read_frame_dir(path, options.fallback_fps);
    if (!fs::exists(path)) throw DataError("ingest: no such file " + path.string());
    if (has_rawv_magic(path)) return read_rawv(path);
    if (options.decoder.empty()) {
        throw ConfigError("data.decoder", "container input " + path.string() +
                                              " needs an external decoder command with {input} and {output} tokens");
    }
    std::random_device rd;
    const fs::path tmp = fs::temp_directory_path() / ("dub3d_decode_" + std::to_string(rd()) + ".rawv");
    const std::string cmd = substitute_decoder_template(options.decoder, path.string(), tmp.string());
    if (options.on_command) options.on_command(cmd);
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
        fs::remove(tmp);
        throw DataError("ingest: decoder exited with status " + std::to_string(rc) + ": " + cmd);
    }
    RawClip clip;
    try {
        clip = read_rawv(tmp);
    } catch (...) {
        fs::remove(tmp);
        throw;
    }
    fs::remove(tmp);
    if (clip.fps <= 0.0) clip.fps = options.fallback_fps;
    return clip;
}

}  // namespace dub3d
