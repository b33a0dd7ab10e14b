#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dub3d/ops.hpp"
#include "dub3d/tensor.hpp"

namespace dub3d {

enum class DecayGroup { Default, SkipConnection };

struct Param {
    std::string name;
    Tensor value;
    DecayGroup group = DecayGroup::Default;
};

enum class Init { Zeros, Ones, TruncNormal };

// Owns the trainable tensors of a model, in registration order.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

    Tensor add(const std::string& name, Shape shape, Init init, DecayGroup group = DecayGroup::Default);

    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }
    const Param* find(const std::string& name) const;
    std::int64_t count() const;
    std::int64_t count_with_prefix(const std::string& prefix) const;
    void zero_grad();

private:
    Rng rng_;
    std::vector<Param> params_;
};

// Forward-pass mode shared by all layers.
struct ForwardContext {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

// y = x W + b, with W stored as [in, out].
class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, bool bias = true,
           DecayGroup group = DecayGroup::Default);

    Tensor operator()(const Tensor& x) const { return linear(x, weight_, bias_); }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }
    std::int64_t in_features() const { return weight_.dim(0); }
    std::int64_t out_features() const { return weight_.dim(1); }

private:
    Tensor weight_;
    Tensor bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, std::int64_t dim, DecayGroup group = DecayGroup::Default);

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_, 1e-5); }

private:
    Tensor gamma_;
    Tensor beta_;
};

// Truncated normal on [-2 std, 2 std].
double trunc_normal(Rng& rng, double std);

}  // namespace dub3d
