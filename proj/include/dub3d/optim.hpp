#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dub3d/nn.hpp"

namespace dub3d {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerSlot {
    std::string name;
    Tensor param;
    double weight_decay = 0.0;
    std::vector<double> m;
    std::vector<double> v;
};

struct OptimizerState {
    std::vector<OptimizerSlot> slots;
    std::int64_t step = 0;
};

OptimizerSlot make_slot(std::string name, Tensor param, double weight_decay);

// One slot per parameter; skip-connection parameters get `skip_decay`, all others `decay`.
OptimizerState make_optimizer_state(const std::vector<Param>& params, double decay, double skip_decay);

// Decoupled weight decay followed by a bias-corrected adaptive-moment update, using the grads
// currently stored on each parameter.
void adamw_step(OptimizerState& state, double lr, const AdamWOptions& options = {});

// base_lr * 0.925^floor(step / ceil(steps_per_epoch / 10)), counted over the global step.
double lr_schedule(std::int64_t step, std::int64_t steps_per_epoch, double base_lr);

}  // namespace dub3d
