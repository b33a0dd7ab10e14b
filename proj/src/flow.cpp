#include "dub3d/flow.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include "dub3d/error.hpp"
#include "dub3d/ops.hpp"

namespace dub3d {

namespace {

using i64 = std::int64_t;

struct Registry {
    std::mutex mu;
    std::map<std::string, FlowEstimatorFactory> factories;
};

Registry& registry() {
    static Registry* r = [] {
        auto* reg = new Registry;
        reg->factories["block_matching"] = [](const FlowConfig& cfg) {
            return std::make_unique<BlockMatchingEstimator>(cfg);
        };
        return reg;
    }();
    return *r;
}

void check_frame(const Tensor& t, const char* what) {
    if (t.rank() != 3) {
        throw std::invalid_argument(std::string("flow: ") + what + " must be [H,W,C], got " + shape_str(t.shape()));
    }
}

// Mean over f x f blocks; remainder rows/cols are dropped.
std::vector<double> area_downsample(std::span<const double> src, i64 H, i64 W, i64 C, i64 f) {
    const i64 h = H / f, w = W / f;
    std::vector<double> out(static_cast<std::size_t>(h * w * C), 0.0);
    const double inv = 1.0 / static_cast<double>(f * f);
    for (i64 y = 0; y < h; ++y) {
        for (i64 x = 0; x < w; ++x) {
            for (i64 c = 0; c < C; ++c) {
                double acc = 0.0;
                for (i64 dy = 0; dy < f; ++dy) {
                    for (i64 dx = 0; dx < f; ++dx) acc += src[((y * f + dy) * W + (x * f + dx)) * C + c];
                }
                out[(y * w + x) * C + c] = acc * inv;
            }
        }
    }
    return out;
}

}  // namespace

void validate_flow_config(const FlowConfig& cfg) {
    if (cfg.block < 1 || cfg.block % 2 == 0) throw ConfigError("flow.block", "must be a positive odd integer");
    if (cfg.radius < 1) throw ConfigError("flow.radius", "must be positive");
    if (cfg.stride < 1) throw ConfigError("flow.stride", "must be positive");
    if (cfg.stride > cfg.block) throw ConfigError("flow.stride", "must not exceed flow.block");
    if (cfg.work_size < 1) throw ConfigError("flow.work_size", "must be positive");
    if (cfg.normalization_scale < 0.0) throw ConfigError("flow.normalization_scale", "must be non-negative");
}

void register_flow_estimator(const std::string& name, FlowEstimatorFactory factory) {
    auto& reg = registry();
    std::lock_guard lock(reg.mu);
    reg.factories[name] = std::move(factory);
}

std::unique_ptr<FlowEstimator> make_flow_estimator(const FlowConfig& cfg) {
    validate_flow_config(cfg);
    auto& reg = registry();
    std::lock_guard lock(reg.mu);
    auto it = reg.factories.find(cfg.estimator);
    if (it == reg.factories.end()) throw ConfigError("flow.estimator", "unknown estimator '" + cfg.estimator + "'");
    return it->second(cfg);
}

BlockMatchingEstimator::BlockMatchingEstimator(FlowConfig cfg) : cfg_(std::move(cfg)) { validate_flow_config(cfg_); }

Tensor BlockMatchingEstimator::match_cells(const Tensor& a, const Tensor& b) const {
    check_frame(a, "frame_a");
    check_frame(b, "frame_b");
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("flow: frame shapes differ " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const i64 H = a.dim(0), W = a.dim(1), C = a.dim(2);
    const i64 s = cfg_.stride, r = cfg_.radius, half = cfg_.block / 2;
    const i64 ny = std::max<i64>(1, H / s), nx = std::max<i64>(1, W / s);
    const auto pa = a.data();
    const auto pb = b.data();

    // Clamped coordinate lookups covering every offset a block plus displacement can reach.
    const i64 reach = half + r;
    auto clamp_table = [&](i64 n, i64 cells) {
        std::vector<i64> t(static_cast<std::size_t>(cells * (2 * reach + 1)));
        for (i64 j = 0; j < cells; ++j) {
            const i64 c = j * s + s / 2;
            for (i64 o = -reach; o <= reach; ++o) t[j * (2 * reach + 1) + (o + reach)] = std::clamp<i64>(c + o, 0, n - 1);
        }
        return t;
    };
    const auto ys = clamp_table(H, ny);
    const auto xs = clamp_table(W, nx);
    const i64 span = 2 * reach + 1;

    std::vector<double> out(static_cast<std::size_t>(ny * nx * 2), 0.0);
    for (i64 cy = 0; cy < ny; ++cy) {
        const i64* yrow = &ys[cy * span + reach];
        for (i64 cx = 0; cx < nx; ++cx) {
            const i64* xrow = &xs[cx * span + reach];
            double best = std::numeric_limits<double>::infinity();
            i64 best_dx = 0, best_dy = 0;
            for (i64 dx = -r; dx <= r; ++dx) {
                for (i64 dy = -r; dy <= r; ++dy) {
                    double ssd = 0.0;
                    for (i64 oy = -half; oy <= half; ++oy) {
                        const double* ra = &pa[yrow[oy] * W * C];
                        const double* rb = &pb[yrow[oy + dy] * W * C];
                        for (i64 ox = -half; ox <= half; ++ox) {
                            const double* va = ra + xrow[ox] * C;
                            const double* vb = rb + xrow[ox + dx] * C;
                            for (i64 c = 0; c < C; ++c) {
                                const double d = va[c] - vb[c];
                                ssd += d * d;
                            }
                        }
                    }
                    // Candidates arrive in lexicographic (dx, dy) order, so strict comparisons
                    // keep the lexicographically smallest among equal cost and magnitude.
                    const i64 mag = std::abs(dx) + std::abs(dy);
                    const i64 best_mag = std::abs(best_dx) + std::abs(best_dy);
                    if (ssd < best || (ssd == best && mag < best_mag)) {
                        best = ssd;
                        best_dx = dx;
                        best_dy = dy;
                    }
                }
            }
            out[(cy * nx + cx) * 2 + 0] = static_cast<double>(best_dx);
            out[(cy * nx + cx) * 2 + 1] = static_cast<double>(best_dy);
        }
    }
    return Tensor::from_data({ny, nx, 2}, std::move(out));
}

std::int64_t flow_work_factor(std::int64_t height, std::int64_t width, const FlowConfig& cfg) {
    return std::max<i64>(1, std::min(height, width) / cfg.work_size);
}

Tensor BlockMatchingEstimator::estimate(const Tensor& a, const Tensor& b) const {
    check_frame(a, "frame_a");
    check_frame(b, "frame_b");
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("flow: frame shapes differ " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const i64 H = a.dim(0), W = a.dim(1), C = a.dim(2);
    const i64 f = flow_work_factor(H, W, cfg_);
    Tensor cells;
    if (f == 1) {
        cells = match_cells(a, b);
    } else {
        const i64 h = H / f, w = W / f;
        Tensor sa = Tensor::from_data({h, w, C}, area_downsample(a.data(), H, W, C, f));
        Tensor sb = Tensor::from_data({h, w, C}, area_downsample(b.data(), H, W, C, f));
        cells = match_cells(sa, sb);
    }
    // Nearest-neighbour upsampling: frame pixel -> working pixel -> cell.
    const i64 ny = cells.dim(0), nx = cells.dim(1), s = cfg_.stride;
    const i64 wh = H / f, ww = W / f;
    std::vector<i64> cell_y(static_cast<std::size_t>(H)), cell_x(static_cast<std::size_t>(W));
    for (i64 y = 0; y < H; ++y) cell_y[y] = std::min(ny - 1, std::min(wh - 1, y / f) / s);
    for (i64 x = 0; x < W; ++x) cell_x[x] = std::min(nx - 1, std::min(ww - 1, x / f) / s);
    const auto pc = cells.data();
    std::vector<double> out(static_cast<std::size_t>(H * W * 2));
    for (i64 y = 0; y < H; ++y) {
        for (i64 x = 0; x < W; ++x) {
            const i64 k = (cell_y[y] * nx + cell_x[x]) * 2;
            out[(y * W + x) * 2] = pc[k];
            out[(y * W + x) * 2 + 1] = pc[k + 1];
        }
    }
    return Tensor::from_data({H, W, 2}, std::move(out));
}

Tensor estimate_flow_pair(const Tensor& a, const Tensor& b, const FlowConfig& cfg) {
    return make_flow_estimator(cfg)->estimate(a, b);
}

FlowField extract_flow_sequence(const Tensor& clip, std::int64_t interval, const FlowConfig& cfg) {
    return extract_flow_sequence(clip, interval, *make_flow_estimator(cfg));
}

FlowField extract_flow_sequence(const Tensor& clip, std::int64_t interval, const FlowEstimator& estimator) {
    if (clip.rank() != 4) throw std::invalid_argument("extract_flow_sequence: clip must be [N,H,W,C]");
    const i64 N = clip.dim(0);
    if (interval < 1) throw std::invalid_argument("extract_flow_sequence: interval must be positive");
    if (N <= interval) {
        throw std::invalid_argument("extract_flow_sequence: need N > K, got N=" + std::to_string(N) +
                                    " K=" + std::to_string(interval));
    }
    const i64 H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
    const i64 frame = H * W * C;
    const auto src = clip.data();
    auto frame_at = [&](i64 i) {
        return Tensor::from_data({H, W, C}, std::vector<double>(src.begin() + i * frame, src.begin() + (i + 1) * frame));
    };
    const i64 L = N - interval;
    std::vector<double> flows;
    flows.reserve(static_cast<std::size_t>(L * H * W * 2));
    for (i64 i = 0; i < L; ++i) {
        Tensor w = estimator.estimate(frame_at(i), frame_at(i + interval));
        flows.insert(flows.end(), w.data().begin(), w.data().end());
    }
    return {Tensor::from_data({L, H, W, 2}, std::move(flows)), interval};
}

FlowField normalize_flow(const FlowField& field, const FlowConfig& cfg) {
    const double scale = cfg.normalization_scale > 0.0 ? cfg.normalization_scale : static_cast<double>(cfg.radius);
    std::vector<double> out(field.flows.data().begin(), field.flows.data().end());
    for (double& v : out) v = std::clamp(v / scale, -1.0, 1.0);
    return {Tensor::from_data(field.flows.shape(), std::move(out)), field.interval};
}

Tensor pad_flow_to_clip_length(const FlowField& field, std::int64_t frames) {
    const i64 L = field.length();
    if (L < 1) throw std::invalid_argument("pad_flow_to_clip_length: empty flow sequence");
    if (frames < L) {
        throw std::invalid_argument("pad_flow_to_clip_length: target " + std::to_string(frames) +
                                    " shorter than sequence " + std::to_string(L));
    }
    return pad_replicate(field.flows, 0, frames);
}

}  // namespace dub3d
