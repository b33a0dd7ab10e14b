#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>

#include "json.hpp"

namespace dub3d {

// Append-only JSON-lines log: {"ts": ISO-8601 UTC, "event": kind, "payload": {...}}.
class RunLog {
public:
    // Creates the parent directory and truncates any previous log at `path`.
    explicit RunLog(const std::filesystem::path& path);

    // Must be the first record of a run.
    void config(const nlohmann::json& resolved, std::uint64_t seed);
    void event(const std::string& kind, const nlohmann::json& payload = nlohmann::json::object());

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mu_;
};

std::string utc_timestamp();

}  // namespace dub3d
