#include "dub3d/nn.hpp"

#include <stdexcept>

namespace dub3d {

double trunc_normal(Rng& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (;;) {
        const double v = dist(rng);
        if (v >= -2.0 * std && v <= 2.0 * std) return v;
    }
}

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, DecayGroup group) {
    if (find(name)) throw std::logic_error("parameter registered twice: " + name);
    Tensor t = Tensor::zeros(std::move(shape), true);
    auto data = t.data_mut();
    switch (init) {
        case Init::Zeros: break;
        case Init::Ones: std::fill(data.begin(), data.end(), 1.0); break;
        case Init::TruncNormal:
            for (auto& v : data) v = trunc_normal(rng_, 0.02);
            break;
    }
    params_.push_back({name, t, group});
    return t;
}

const Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::int64_t ParamStore::count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

std::int64_t ParamStore::count_with_prefix(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& p : params_) {
        if (p.name.starts_with(prefix)) n += p.value.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

Linear::Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, bool bias,
               DecayGroup group) {
    weight_ = store.add(name + ".weight", {in, out}, Init::TruncNormal, group);
    if (bias) bias_ = store.add(name + ".bias", {out}, Init::Zeros, group);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::int64_t dim, DecayGroup group) {
    gamma_ = store.add(name + ".weight", {dim}, Init::Ones, group);
    beta_ = store.add(name + ".bias", {dim}, Init::Zeros, group);
}

}  // namespace dub3d
