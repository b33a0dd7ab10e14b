#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dub3d/tensor.hpp"

namespace dub3d {

struct FlowConfig {
    std::string estimator = "block_matching";
    std::int64_t block = 9;
    std::int64_t radius = 8;
    std::int64_t stride = 4;
    // Frames whose short edge exceeds this are area-downsampled by an integer factor first.
    std::int64_t work_size = 56;
    // normalize_flow divides by this; 0 means "use radius".
    double normalization_scale = 0.0;
};

// Throws ConfigError for an even block, non-positive sizes, or stride > block.
void validate_flow_config(const FlowConfig& cfg);

struct FlowField {
    Tensor flows;  // [N-K, H, W, 2], (dx, dy) in working-resolution pixels
    std::int64_t interval = 1;

    std::int64_t length() const { return flows.defined() ? flows.dim(0) : 0; }
};

class FlowEstimator {
public:
    virtual ~FlowEstimator() = default;
    virtual std::string name() const = 0;
    // a, b: [H, W, C] -> [H, W, 2].
    virtual Tensor estimate(const Tensor& a, const Tensor& b) const = 0;
};

using FlowEstimatorFactory = std::function<std::unique_ptr<FlowEstimator>(const FlowConfig&)>;

void register_flow_estimator(const std::string& name, FlowEstimatorFactory factory);
// Throws ConfigError("flow.estimator") for an unknown name.
std::unique_ptr<FlowEstimator> make_flow_estimator(const FlowConfig& cfg);

// Exhaustive SSD block matching on stride-spaced cells. Samples outside the frame clamp to
// the nearest edge pixel. Ties go to the smallest |dx|+|dy|, then to the smallest (dx, dy).
class BlockMatchingEstimator : public FlowEstimator {
public:
    explicit BlockMatchingEstimator(FlowConfig cfg);
    std::string name() const override { return "block_matching"; }
    Tensor estimate(const Tensor& a, const Tensor& b) const override;

    // Matching at the given resolution without any resampling: [ny, nx, 2] with
    // ny = max(1, H / stride), nx = max(1, W / stride).
    Tensor match_cells(const Tensor& a, const Tensor& b) const;

private:
    FlowConfig cfg_;
};

Tensor estimate_flow_pair(const Tensor& a, const Tensor& b, const FlowConfig& cfg);

// W_i = flow(V_i, V_{i+K}) for i = 0..N-K-1. clip: [N, H, W, C].
FlowField extract_flow_sequence(const Tensor& clip, std::int64_t interval, const FlowConfig& cfg);
FlowField extract_flow_sequence(const Tensor& clip, std::int64_t interval, const FlowEstimator& estimator);

FlowField normalize_flow(const FlowField& field, const FlowConfig& cfg);

// Replicates the last field until the sequence has `frames` entries: [frames, H, W, 2].
Tensor pad_flow_to_clip_length(const FlowField& field, std::int64_t frames);

// Integer area-downsampling factor used for a frame of this size.
std::int64_t flow_work_factor(std::int64_t height, std::int64_t width, const FlowConfig& cfg);

}  // namespace dub3d
