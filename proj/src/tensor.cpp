#include "dub3d/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dub3d {

namespace {

thread_local bool g_grad_enabled = true;
bool g_strict_nan = false;

void require_defined(const std::shared_ptr<detail::Node>& node) {
    if (!node) throw std::logic_error("tensor: use of undefined tensor");
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return from_node(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape& Tensor::shape() const {
    require_defined(node_);
    return node_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
    auto r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return shape()[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const {
    require_defined(node_);
    return static_cast<std::int64_t>(node_->data.size());
}

std::span<const double> Tensor::data() const {
    require_defined(node_);
    return node_->data;
}

std::span<double> Tensor::data_mut() {
    require_defined(node_);
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw std::invalid_argument("tensor: index rank mismatch for " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[d]) throw std::out_of_range("tensor: index out of range for " + shape_str(s));
        flat = flat * s[d] + i;
        ++d;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const {
    require_defined(node_);
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool value) {
    require_defined(node_);
    node_->requires_grad = value;
}

bool Tensor::has_grad() const {
    require_defined(node_);
    return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
    require_defined(node_);
    return node_->grad;
}

std::span<double> Tensor::grad_mut() {
    require_defined(node_);
    return node_->ensure_grad();
}

void Tensor::zero_grad() {
    require_defined(node_);
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
    require_defined(node_);
    node_->grad.clear();
    node_->grad.shrink_to_fit();
}

void Tensor::backward() {
    if (numel() != 1) {
        throw std::invalid_argument("backward: implicit seed needs a scalar, got " + shape_str(shape()));
    }
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) {
    require_defined(node_);
    if (static_cast<std::int64_t>(seed.size()) != numel()) {
        throw std::invalid_argument("backward: seed size does not match " + shape_str(shape()));
    }
    if (!node_->requires_grad) throw std::logic_error("backward: tensor does not require grad");

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    auto& g = node_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // The graph is single-use: release closures and intermediate grads.
    for (detail::Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            if (n != node_.get()) {
                n->grad.clear();
                n->grad.shrink_to_fit();
            }
        }
    }
}

Tensor Tensor::detach() const {
    require_defined(node_);
    return from_data(node_->shape, node_->data, false);
}

Tensor Tensor::clone() const {
    auto t = detach();
    t.node_->requires_grad = node_->requires_grad;
    return t;
}

const char* Tensor::op_name() const {
    require_defined(node_);
    return node_->op;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_strict_nan(bool enabled) { g_strict_nan = enabled; }
bool strict_nan() { return g_strict_nan; }

}  // namespace dub3d
