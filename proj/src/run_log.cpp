#include "dub3d/run_log.hpp"

#include <chrono>
#include <ctime>

#include "dub3d/error.hpp"

namespace dub3d {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

RunLog::RunLog(const std::filesystem::path& path) : path_(path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    out_.open(path, std::ios::trunc);
    if (!out_) throw DataError("run log: cannot open " + path.string());
}

void RunLog::config(const nlohmann::json& resolved, std::uint64_t seed) {
    event("config", {{"config", resolved}, {"seed", seed}});
}

void RunLog::event(const std::string& kind, const nlohmann::json& payload) {
    nlohmann::json line = {{"ts", utc_timestamp()}, {"event", kind}, {"payload", payload}};
    std::lock_guard lock(mu_);
    out_ << line.dump() << '\n';
    out_.flush();
}

}  // namespace dub3d
