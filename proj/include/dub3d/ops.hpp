#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dub3d/tensor.hpp"

namespace dub3d {

// Batched matrix product. a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with the same
// leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor softmax(const Tensor& x, std::int64_t axis);
// Normalizes over the last axis; gamma and beta have shape [C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Exact (erf) form.
Tensor gelu(const Tensor& x);
// Inverted dropout. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& perm);
Tensor transpose(const Tensor& x, std::int64_t axis_a, std::int64_t axis_b);
Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis);
// Mean over one axis; the axis is removed.
Tensor mean(const Tensor& x, std::int64_t axis);
Tensor sum(const Tensor& x);

// Gathers entries along an axis; indices may repeat.
Tensor index_select(const Tensor& x, std::int64_t axis, std::vector<std::int64_t> index);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
// Cyclic shift along an axis: out[i] = x[(i - shift) mod n].
Tensor roll(const Tensor& x, std::int64_t axis, std::int64_t shift);
// Extends an axis to new_length by repeating its last entry.
Tensor pad_replicate(const Tensor& x, std::int64_t axis, std::int64_t new_length);

// x: [..., in]; weight: [in, out]; bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Mean negative log-likelihood of softmax(logits) at the labels. logits: [B, C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace dub3d
