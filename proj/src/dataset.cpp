#include "dub3d/dataset.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

#include "dub3d/checkpoint.hpp"
#include "dub3d/error.hpp"

namespace dub3d {

namespace fs = std::filesystem;
using i64 = std::int64_t;

fs::path resolve_clip_path(const fs::path& root, const std::string& entry_path) {
    fs::path p(entry_path);
    return p.is_absolute() ? p : root / p;
}

int worker_threads() {
    if (const char* env = std::getenv("DUB3D_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(worker_threads()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

ClipDataset::ClipDataset(Manifest entries, fs::path root, const RunConfig& cfg)
    : entries_(std::move(entries)), root_(std::move(root)), cfg_(cfg) {
    if (cfg_.model.uses_flow()) estimator_ = make_flow_estimator(cfg_.flow);
}

std::shared_ptr<const RawClip> ClipDataset::raw(std::size_t index) const {
    {
        std::lock_guard lock(mu_);
        auto it = raw_cache_.find(index);
        if (it != raw_cache_.end()) return it->second;
    }
    IngestOptions opts;
    opts.decoder = cfg_.decoder;
    opts.fallback_fps = entries_[index].fps;
    opts.on_command = on_command_;
    auto clip = std::make_shared<const RawClip>(ingest_external(resolve_clip_path(root_, entries_[index].path), opts));
    std::lock_guard lock(mu_);
    return raw_cache_.emplace(index, std::move(clip)).first->second;
}

std::int64_t ClipDataset::flow_pairs_computed() const {
    std::lock_guard lock(mu_);
    return computed_;
}

std::vector<float> ClipDataset::pair_flow(std::size_t index, const Tensor& clip, i64 pos_a, i64 pos_b, i64 frame_a,
                                          i64 frame_b, bool flip) const {
    const auto key = std::make_tuple(index, frame_a, frame_b, flip);
    {
        std::lock_guard lock(mu_);
        auto it = flow_cache_.find(key);
        if (it != flow_cache_.end()) return it->second;
    }
    fs::path disk;
    if (!cfg_.flow_cache.empty()) {
        disk = fs::path(cfg_.flow_cache) / (entries_[index].id + ".a" + std::to_string(frame_a) + ".b" +
                                            std::to_string(frame_b) + (flip ? ".flip" : "") + ".dub3d");
    }
    std::vector<float> flow;
    if (!disk.empty() && fs::exists(disk)) {
        const Checkpoint ck = read_checkpoint(disk);
        const Tensor* t = ck.find("flow");
        if (!t) throw DataError("flow cache: " + disk.string() + " has no 'flow' tensor");
        flow.assign(t->data().begin(), t->data().end());
    } else {
        const i64 H = clip.dim(1), W = clip.dim(2);
        const i64 frame = H * W * 3;
        auto slice_frame = [&](i64 pos) {
            const auto d = clip.data();
            return Tensor::from_data({H, W, 3}, std::vector<double>(d.begin() + pos * frame, d.begin() + (pos + 1) * frame));
        };
        Tensor w = estimator_->estimate(slice_frame(pos_a), slice_frame(pos_b));
        FlowField f{reshape(w, {1, H, W, 2}), 1};
        Tensor n = normalize_flow(f, cfg_.flow).flows;
        flow.assign(n.data().begin(), n.data().end());
        if (!disk.empty()) {
            std::error_code ec;
            fs::create_directories(disk.parent_path(), ec);
            std::vector<double> vals(flow.begin(), flow.end());
            save_checkpoint(disk, CheckpointHeader{"flow", "", 0, {{"entry", entries_[index].id}}},
                            {{"flow", Tensor::from_data({H, W, 2}, std::move(vals))}});
        }
        std::lock_guard lock(mu_);
        ++computed_;
    }
    std::lock_guard lock(mu_);
    return flow_cache_.emplace(key, std::move(flow)).first->second;
}

Sample ClipDataset::get(std::size_t index, Mode mode, Rng* rng) const {
    const auto& entry = entries_.at(index);
    const auto source = raw(index);
    const i64 N = cfg_.model.frame_count;
    // The manifest may disagree with the file; trust the decoded clip.
    const double fps = source->fps > 0.0 ? source->fps : entry.fps;
    const auto indices = sample_frames(source->frames, fps, N, cfg_.preprocess.target_fps, mode, rng);
    bool flip = false;
    Sample s;
    s.id = entry.id;
    s.label = entry.label == Label::Generated ? 1 : 0;
    s.clip = preprocess_clip(*source, indices, cfg_.preprocess, mode, rng, &flip);
    if (!cfg_.model.uses_flow()) return s;

    const i64 K = cfg_.model.frame_interval;
    const i64 H = s.clip.dim(1), W = s.clip.dim(2);
    const i64 plane = H * W * 2;
    std::vector<double> flows(static_cast<std::size_t>(N * plane));
    for (i64 i = 0; i < N - K; ++i) {
        const auto f = pair_flow(index, s.clip, i, i + K, indices[i], indices[i + K], flip);
        std::copy(f.begin(), f.end(), flows.begin() + i * plane);
    }
    for (i64 i = N - K; i < N; ++i) {
        std::copy(flows.begin() + (N - K - 1) * plane, flows.begin() + (N - K) * plane, flows.begin() + i * plane);
    }
    s.flow = Tensor::from_data({N, H, W, 2}, std::move(flows));
    return s;
}

}  // namespace dub3d
