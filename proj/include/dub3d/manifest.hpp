#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dub3d {

enum class Label { Real = 0, Generated = 1 };

std::string_view label_name(Label label);

// Splits used by the protocol. "excluded" holds clips kept in the composition tally but out of
// every train/test split (Text2Video-Zero).
inline constexpr std::string_view kSplitNames[] = {"train", "in_domain_test", "out_of_domain_test", "excluded"};
bool is_known_split(std::string_view split);

// Generators seen during training; out-of-domain clips must come from other models.
inline constexpr std::string_view kInDomainModels[] = {"Pika", "ModelScope", "VideoCraft2"};

struct ManifestEntry {
    std::string id;
    std::string path;
    Label label = Label::Real;
    std::string source;
    std::optional<std::string> model;
    double fps = 0.0;
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::int64_t frame_count = 0;
    std::string split = "train";
    // Metadata-only manifests may fold identical clips into one line.
    std::int64_t count = 1;
};

using Manifest = std::vector<ManifestEntry>;

// Throws DataError naming the entry on an invariant violation.
void validate_entry(const ManifestEntry& entry);

// One JSON object per line; blank lines are skipped. Errors name the 1-based line number.
Manifest parse_manifest(std::istream& in, std::string_view origin = "manifest");
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& entries, std::ostream& out);
void write_manifest(const Manifest& entries, const std::filesystem::path& path);

Manifest filter_split(const Manifest& entries, std::string_view split);
// Sum of `count` over entries.
std::int64_t clip_total(const Manifest& entries);

}  // namespace dub3d
