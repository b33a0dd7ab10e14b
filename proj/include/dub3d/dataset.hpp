#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "dub3d/clip_io.hpp"
#include "dub3d/config.hpp"
#include "dub3d/manifest.hpp"

namespace dub3d {

struct Sample {
    std::string id;
    int label = 0;
    Tensor clip;  // [N, H, W, 3]
    Tensor flow;  // [N, H, W, 2] normalised and padded; undefined when the variant has no flow
};

// Loads clips for manifest entries and turns them into model inputs. Thread-safe: raw clips
// and per-pair flow fields are cached behind a mutex.
class ClipDataset {
public:
    ClipDataset(Manifest entries, std::filesystem::path root, const RunConfig& cfg);

    std::size_t size() const { return entries_.size(); }
    const Manifest& entries() const { return entries_; }

    // Train mode draws the frame offset and flip from `rng`.
    Sample get(std::size_t index, Mode mode, Rng* rng) const;

    // Receives each external decoder command before it runs.
    void set_command_hook(std::function<void(const std::string&)> hook) { on_command_ = std::move(hook); }

    std::int64_t flow_pairs_computed() const;

private:
    std::shared_ptr<const RawClip> raw(std::size_t index) const;
    std::vector<float> pair_flow(std::size_t index, const Tensor& clip, std::int64_t pos_a, std::int64_t pos_b,
                                 std::int64_t frame_a, std::int64_t frame_b, bool flip) const;

    Manifest entries_;
    std::filesystem::path root_;
    RunConfig cfg_;
    std::unique_ptr<FlowEstimator> estimator_;
    std::function<void(const std::string&)> on_command_;

    mutable std::mutex mu_;
    mutable std::map<std::size_t, std::shared_ptr<const RawClip>> raw_cache_;
    mutable std::map<std::tuple<std::size_t, std::int64_t, std::int64_t, bool>, std::vector<float>> flow_cache_;
    mutable std::int64_t computed_ = 0;
};

// Resolves an entry path against the manifest's directory unless it is absolute.
std::filesystem::path resolve_clip_path(const std::filesystem::path& root, const std::string& entry_path);

// Worker count from DUB3D_THREADS (default: hardware concurrency, at least 1).
int worker_threads();
// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Exceptions propagate.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dub3d
