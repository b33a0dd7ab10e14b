#include "dub3d/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dub3d {

OptimizerSlot make_slot(std::string name, Tensor param, double weight_decay) {
    OptimizerSlot slot;
    slot.name = std::move(name);
    slot.weight_decay = weight_decay;
    slot.m.assign(static_cast<std::size_t>(param.numel()), 0.0);
    slot.v.assign(static_cast<std::size_t>(param.numel()), 0.0);
    slot.param = std::move(param);
    return slot;
}

OptimizerState make_optimizer_state(const std::vector<Param>& params, double decay, double skip_decay) {
    OptimizerState state;
    state.slots.reserve(params.size());
    for (const auto& p : params) {
        state.slots.push_back(make_slot(p.name, p.value, p.group == DecayGroup::SkipConnection ? skip_decay : decay));
    }
    return state;
}

void adamw_step(OptimizerState& state, double lr, const AdamWOptions& options) {
    if (!(lr > 0.0)) throw std::invalid_argument("adamw_step: lr must be positive");
    for (const auto& slot : state.slots) {
        if (!slot.param.has_grad()) throw std::invalid_argument("adamw_step: missing grad for parameter " + slot.name);
    }
    const std::int64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
    for (auto& slot : state.slots) {
        auto p = slot.param.data_mut();
        const auto g = slot.param.grad();
        const double decay = 1.0 - lr * slot.weight_decay;
        for (std::size_t i = 0; i < p.size(); ++i) {
            slot.m[i] = options.beta1 * slot.m[i] + (1.0 - options.beta1) * g[i];
            slot.v[i] = options.beta2 * slot.v[i] + (1.0 - options.beta2) * g[i] * g[i];
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + options.eps);
        }
    }
    state.step = t;
}

double lr_schedule(std::int64_t step, std::int64_t steps_per_epoch, double base_lr) {
    // Integer ceil: 0.1 * 30 is not exactly 3 in floating point.
    const std::int64_t interval = std::max<std::int64_t>(1, (steps_per_epoch + 9) / 10);
    return base_lr * std::pow(0.925, static_cast<double>(step / interval));
}

}  // namespace dub3d
