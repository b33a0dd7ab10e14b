#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dub3d {

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals with define-by-run reverse-mode differentiation.
// Copies share the underlying node; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
    std::int64_t dim(std::int64_t axis) const;
    std::int64_t numel() const;

    std::span<const double> data() const;
    // Direct write access, for parameter updates and crafted fixtures. Never call while a
    // graph that reads this tensor is waiting for backward().
    std::span<double> data_mut();
    double item() const;
    double at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();
    void clear_grad();

    // Backpropagates from a scalar with seed 1.
    void backward();
    // Backpropagates with an explicit upstream gradient of the same size.
    void backward(std::span<const double> seed);

    Tensor detach() const;
    Tensor clone() const;
    const char* op_name() const;

    // Internal: construct/inspect the graph node. Used by the op library.
    static Tensor from_node(std::shared_ptr<detail::Node> node);
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// When on, every op rejects inputs containing NaN.
void set_strict_nan(bool enabled);
bool strict_nan();

}  // namespace dub3d
