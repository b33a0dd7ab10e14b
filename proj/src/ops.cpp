#include "dub3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dub3d {

namespace {

using detail::Node;
using i64 = std::int64_t;

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
constexpr double kInvSqrt2Pi = std::numbers::inv_sqrtpi * kInvSqrt2;

std::invalid_argument shape_error(const char* op, const Shape& a, const Shape& b) {
    return std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_finite_inputs(const char* op, std::initializer_list<const Tensor*> inputs) {
    if (!strict_nan()) return;
    for (const Tensor* t : inputs) {
        if (!t->defined()) continue;
        for (double v : t->data()) {
            if (std::isnan(v)) throw std::domain_error(std::string(op) + ": NaN in input " + shape_str(t->shape()));
        }
    }
}

i64 normalize_axis(const char* op, i64 axis, i64 rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw std::out_of_range(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
    }
    return axis;
}

// Sizes of the dims before, at and after an axis.
struct AxisSplit {
    i64 outer = 1;
    i64 len = 1;
    i64 inner = 1;
};

AxisSplit split_at(const Shape& s, i64 axis) {
    AxisSplit r;
    for (i64 i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (i64 i = axis + 1; i < static_cast<i64>(s.size()); ++i) r.inner *= s[i];
    return r;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) needs_grad = needs_grad || (t.defined() && t.requires_grad());
    }
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& t : inputs) {
            if (t.defined()) node->parents.push_back(t.node());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::from_node(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                     std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::from_node(std::move(node));
}

// Returns the grad buffer of an input that participates in differentiation, else nullptr.
double* grad_of(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    return t.node()->ensure_grad().data();
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(const double* A, const double* B, double* C, i64 M, i64 K, i64 N) {
    for (i64 i = 0; i < M; ++i) {
        double* c = C + i * N;
        const double* a = A + i * K;
        i64 k = 0;
        for (; k + 4 <= K; k += 4) {
            const double a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
            const double* b0 = B + k * N;
            const double* b1 = b0 + N;
            const double* b2 = b1 + N;
            const double* b3 = b2 + N;
            for (i64 j = 0; j < N; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < K; ++k) {
            const double av = a[k];
            const double* b = B + k * N;
            for (i64 j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void transpose_2d(const double* src, double* dst, i64 rows, i64 cols) {
    constexpr i64 kTile = 32;
    for (i64 r0 = 0; r0 < rows; r0 += kTile) {
        for (i64 c0 = 0; c0 < cols; c0 += kTile) {
            const i64 r1 = std::min(rows, r0 + kTile);
            const i64 c1 = std::min(cols, c0 + kTile);
            for (i64 r = r0; r < r1; ++r) {
                for (i64 c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const i64 da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const i64 db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) throw shape_error(op, a, b);
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed with the broadcast output shape (0 on broadcast dims).
std::vector<i64> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<i64> strides(out.size(), 0);
    i64 stride = 1;
    for (i64 i = static_cast<i64>(in.size()) - 1; i >= 0; --i) {
        const std::size_t o = i + (out.size() - in.size());
        strides[o] = in[i] == 1 ? 0 : stride;
        stride *= in[i];
    }
    return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element in row-major order.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<i64>& sa, const std::vector<i64>& sb, Fn&& fn) {
    const i64 total = shape_numel(out);
    if (total == 0) return;
    if (out.empty()) {
        fn(0, 0, 0);
        return;
    }
    const std::size_t rank = out.size();
    const i64 last = out[rank - 1];
    const i64 la = sa[rank - 1];
    const i64 lb = sb[rank - 1];
    std::vector<i64> idx(rank, 0);
    i64 ia = 0, ib = 0;
    for (i64 o = 0; o < total; o += last) {
        for (i64 j = 0; j < last; ++j) fn(o + j, ia + j * la, ib + j * lb);
        for (i64 d = static_cast<i64>(rank) - 2; d >= 0; --d) {
            if (++idx[d] < out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            ia -= sa[d] * (out[d] - 1);
            ib -= sb[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const char* op, BinaryKind kind, const Tensor& a, const Tensor& b) {
    check_finite_inputs(op, {&a, &b});
    const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
    const auto pa = a.data();
    const auto pb = b.data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    const bool same = a.shape() == b.shape();
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);

    auto apply = [&](auto f) {
        if (same) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
        } else {
            for_each_broadcast(out_shape, sa, sb, [&](i64 o, i64 ia, i64 ib) { out[o] = f(pa[ia], pb[ib]); });
        }
    };
    switch (kind) {
        case BinaryKind::Add: apply([](double x, double y) { return x + y; }); break;
        case BinaryKind::Sub: apply([](double x, double y) { return x - y; }); break;
        case BinaryKind::Mul: apply([](double x, double y) { return x * y; }); break;
    }

    return make_result(op, out_shape, std::move(out), {a, b},
                       [a, b, kind, same, out_shape, sa = std::move(sa), sb = std::move(sb)](Node& self) {
        const auto& g = self.grad;
        double* ga = grad_of(a);
        double* gb = grad_of(b);
        const double sign_b = kind == BinaryKind::Sub ? -1.0 : 1.0;
        if (kind == BinaryKind::Mul) {
            const auto pa = a.data();
            const auto pb = b.data();
            if (same) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (ga) ga[i] += g[i] * pb[i];
                    if (gb) gb[i] += g[i] * pa[i];
                }
            } else {
                for_each_broadcast(out_shape, sa, sb, [&](i64 o, i64 ia, i64 ib) {
                    if (ga) ga[ia] += g[o] * pb[ib];
                    if (gb) gb[ib] += g[o] * pa[ia];
                });
            }
            return;
        }
        if (same) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (ga) ga[i] += g[i];
                if (gb) gb[i] += sign_b * g[i];
            }
        } else {
            for_each_broadcast(out_shape, sa, sb, [&](i64 o, i64 ia, i64 ib) {
                if (ga) ga[ia] += g[o];
                if (gb) gb[ib] += sign_b * g[o];
            });
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_finite_inputs("matmul", {&a, &b});
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) throw shape_error("matmul", as, bs);
    const i64 M = as[as.size() - 2];
    const i64 K = as[as.size() - 1];
    const i64 N = bs[bs.size() - 1];
    if (bs[bs.size() - 2] != K) throw shape_error("matmul", as, bs);
    const bool shared_b = bs.size() == 2;
    if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
        throw shape_error("matmul", as, bs);
    }
    i64 batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

    Shape out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<double> out(static_cast<std::size_t>(batch * M * N), 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (shared_b) {
        gemm_acc(pa, pb, out.data(), batch * M, K, N);
    } else {
        for (i64 i = 0; i < batch; ++i) gemm_acc(pa + i * M * K, pb + i * K * N, out.data() + i * M * N, M, K, N);
    }

    return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                       [a, b, batch, M, K, N, shared_b](Node& self) {
        const double* g = self.grad.data();
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        if (double* ga = grad_of(a)) {
            // dA = dC * B^T
            std::vector<double> bt(static_cast<std::size_t>(K * N));
            if (shared_b) {
                transpose_2d(pb, bt.data(), K, N);
                gemm_acc(g, bt.data(), ga, batch * M, N, K);
            } else {
                for (i64 i = 0; i < batch; ++i) {
                    transpose_2d(pb + i * K * N, bt.data(), K, N);
                    gemm_acc(g + i * M * N, bt.data(), ga + i * M * K, M, N, K);
                }
            }
        }
        if (double* gb = grad_of(b)) {
            // dB = A^T * dC
            if (shared_b) {
                std::vector<double> at(static_cast<std::size_t>(batch * M * K));
                transpose_2d(pa, at.data(), batch * M, K);
                gemm_acc(at.data(), g, gb, K, batch * M, N);
            } else {
                std::vector<double> at(static_cast<std::size_t>(M * K));
                for (i64 i = 0; i < batch; ++i) {
                    transpose_2d(pa + i * M * K, at.data(), M, K);
                    gemm_acc(at.data(), g + i * M * N, gb + i * K * N, K, M, N);
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::Mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
    check_finite_inputs("scale", {&a});
    const auto pa = a.data();
    std::vector<double> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * factor;
    return make_result("scale", a.shape(), std::move(out), {a}, [a, factor](Node& self) {
        double* ga = grad_of(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
    });
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
    check_finite_inputs("softmax", {&x});
    axis = normalize_axis("softmax", axis, x.rank());
    const AxisSplit s = split_at(x.shape(), axis);
    const auto px = x.data();
    std::vector<double> out(px.size());
    for (i64 o = 0; o < s.outer; ++o) {
        for (i64 in = 0; in < s.inner; ++in) {
            const i64 base = o * s.len * s.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (i64 k = 0; k < s.len; ++k) mx = std::max(mx, px[base + k * s.inner]);
            double total = 0.0;
            for (i64 k = 0; k < s.len; ++k) {
                const double e = std::exp(px[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                total += e;
            }
            const double inv = 1.0 / total;
            for (i64 k = 0; k < s.len; ++k) out[base + k * s.inner] *= inv;
        }
    }
    return make_result("softmax", x.shape(), std::move(out), {x}, [x, s](Node& self) {
        double* gx = grad_of(x);
        const auto& y = self.data;
        const auto& g = self.grad;
        for (i64 o = 0; o < s.outer; ++o) {
            for (i64 in = 0; in < s.inner; ++in) {
                const i64 base = o * s.len * s.inner + in;
                double dot = 0.0;
                for (i64 k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
                for (i64 k = 0; k < s.len; ++k) {
                    const i64 i = base + k * s.inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_finite_inputs("layer_norm", {&x, &gamma, &beta});
    if (x.rank() < 1) throw shape_error("layer_norm", x.shape(), gamma.shape());
    const i64 C = x.dim(-1);
    if (gamma.shape() != Shape{C}) throw shape_error("layer_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{C}) throw shape_error("layer_norm", x.shape(), beta.shape());
    const i64 rows = x.numel() / std::max<i64>(C, 1);
    const auto px = x.data();
    const auto pg = gamma.data();
    const auto pb = beta.data();
    std::vector<double> out(px.size());
    std::vector<double> xhat(px.size());
    std::vector<double> rstd(static_cast<std::size_t>(rows));
    for (i64 r = 0; r < rows; ++r) {
        const double* row = px.data() + r * C;
        double m = 0.0;
        for (i64 c = 0; c < C; ++c) m += row[c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (i64 c = 0; c < C; ++c) var += (row[c] - m) * (row[c] - m);
        var /= static_cast<double>(C);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (i64 c = 0; c < C; ++c) {
            const double h = (row[c] - m) * rs;
            xhat[r * C + c] = h;
            out[r * C + c] = h * pg[c] + pb[c];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [x, gamma, beta, C, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const auto& g = self.grad;
        double* gx = grad_of(x);
        double* gg = grad_of(gamma);
        double* gb = grad_of(beta);
        const auto pg = gamma.data();
        std::vector<double> dxhat(static_cast<std::size_t>(C));
        for (i64 r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * C;
            const double* hr = xhat.data() + r * C;
            if (gg || gb) {
                for (i64 c = 0; c < C; ++c) {
                    if (gg) gg[c] += gr[c] * hr[c];
                    if (gb) gb[c] += gr[c];
                }
            }
            if (!gx) continue;
            double mean_d = 0.0;
            double mean_dh = 0.0;
            for (i64 c = 0; c < C; ++c) {
                dxhat[c] = gr[c] * pg[c];
                mean_d += dxhat[c];
                mean_dh += dxhat[c] * hr[c];
            }
            mean_d /= static_cast<double>(C);
            mean_dh /= static_cast<double>(C);
            for (i64 c = 0; c < C; ++c) gx[r * C + c] += rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
        }
    });
}

Tensor gelu(const Tensor& x) {
    check_finite_inputs("gelu", {&x});
    const auto px = x.data();
    std::vector<double> out(px.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
    return make_result("gelu", x.shape(), std::move(out), {x}, [x](Node& self) {
        double* gx = grad_of(x);
        const auto px = x.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = px[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    check_finite_inputs("dropout", {&x});
    const auto px = x.data();
    std::bernoulli_distribution keep(1.0 - p);
    const double inv = 1.0 / (1.0 - p);
    std::vector<double> mask(px.size());
    std::vector<double> out(px.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = keep(rng) ? inv : 0.0;
        out[i] = px[i] * mask[i];
    }
    return make_result("dropout", x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
        double* gx = grad_of(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * mask[i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    i64 known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw std::invalid_argument("reshape: more than one -1 in " + shape_str(shape));
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.numel() % known != 0) throw shape_error("reshape", x.shape(), shape);
        shape[infer] = x.numel() / known;
    }
    if (shape_numel(shape) != x.numel()) throw shape_error("reshape", x.shape(), shape);
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {x}, [x](Node& self) {
        double* gx = grad_of(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

namespace {

// out[o] = in[src(o)] for a permutation of axes; calls fn(out_index, in_index).
template <typename Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<i64>& perm, Fn&& fn) {
    const std::size_t rank = in_shape.size();
    std::vector<i64> in_strides(rank, 1);
    for (i64 i = static_cast<i64>(rank) - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    Shape out_shape(rank);
    std::vector<i64> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[perm[i]];
        strides[i] = in_strides[perm[i]];
    }
    const i64 total = shape_numel(in_shape);
    if (total == 0) return;
    if (rank == 0) {
        fn(0, 0);
        return;
    }
    const i64 last = out_shape[rank - 1];
    const i64 ls = strides[rank - 1];
    std::vector<i64> idx(rank, 0);
    i64 base = 0;
    for (i64 o = 0; o < total; o += last) {
        for (i64 j = 0; j < last; ++j) fn(o + j, base + j * ls);
        for (i64 d = static_cast<i64>(rank) - 2; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) {
                base += strides[d];
                break;
            }
            base -= strides[d] * (out_shape[d] - 1);
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& perm_in) {
    const i64 rank = x.rank();
    if (static_cast<i64>(perm_in.size()) != rank) {
        throw std::invalid_argument("permute: permutation size does not match " + shape_str(x.shape()));
    }
    std::vector<i64> perm(perm_in.size());
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        perm[i] = normalize_axis("permute", perm_in[i], rank);
        if (seen[perm[i]]) throw std::invalid_argument("permute: repeated axis");
        seen[perm[i]] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[perm[i]];
    const auto px = x.data();
    std::vector<double> out(px.size());
    for_each_permuted(x.shape(), perm, [&](i64 o, i64 i) { out[o] = px[i]; });
    return make_result("permute", std::move(out_shape), std::move(out), {x}, [x, perm](Node& self) {
        double* gx = grad_of(x);
        const auto& g = self.grad;
        for_each_permuted(x.shape(), perm, [&](i64 o, i64 i) { gx[i] += g[o]; });
    });
}

Tensor transpose(const Tensor& x, std::int64_t axis_a, std::int64_t axis_b) {
    const i64 rank = x.rank();
    axis_a = normalize_axis("transpose", axis_a, rank);
    axis_b = normalize_axis("transpose", axis_b, rank);
    std::vector<i64> perm(rank);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[axis_a], perm[axis_b]);
    return permute(x, perm);
}

Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = xs[0].shape();
    axis = normalize_axis("concat", axis, static_cast<i64>(first.size()));
    i64 total_len = 0;
    for (const auto& t : xs) {
        check_finite_inputs("concat", {&t});
        const Shape& s = t.shape();
        if (s.size() != first.size()) throw shape_error("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (static_cast<i64>(d) != axis && s[d] != first[d]) throw shape_error("concat", first, s);
        }
        total_len += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total_len;
    const AxisSplit os = split_at(out_shape, axis);
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<i64> offsets;
    i64 offset = 0;
    for (const auto& t : xs) {
        offsets.push_back(offset);
        const i64 len = t.shape()[axis];
        const auto pt = t.data();
        const i64 block = len * os.inner;
        for (i64 o = 0; o < os.outer; ++o) {
            std::copy_n(pt.data() + o * block, block, out.data() + o * os.len * os.inner + offset * os.inner);
        }
        offset += len;
    }
    return make_result_n("concat", out_shape, std::move(out), xs, [xs, axis, os, offsets](Node& self) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
            double* gx = grad_of(xs[k]);
            if (!gx) continue;
            const i64 block = xs[k].shape()[axis] * os.inner;
            for (i64 o = 0; o < os.outer; ++o) {
                const double* src = self.grad.data() + o * os.len * os.inner + offsets[k] * os.inner;
                double* dst = gx + o * block;
                for (i64 i = 0; i < block; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor mean(const Tensor& x, std::int64_t axis) {
    check_finite_inputs("mean", {&x});
    axis = normalize_axis("mean", axis, x.rank());
    const AxisSplit s = split_at(x.shape(), axis);
    if (s.len == 0) throw std::invalid_argument("mean: empty axis in " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + axis);
    const auto px = x.data();
    std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
    const double inv = 1.0 / static_cast<double>(s.len);
    for (i64 o = 0; o < s.outer; ++o) {
        double* dst = out.data() + o * s.inner;
        for (i64 k = 0; k < s.len; ++k) {
            const double* src = px.data() + (o * s.len + k) * s.inner;
            for (i64 in = 0; in < s.inner; ++in) dst[in] += src[in];
        }
        for (i64 in = 0; in < s.inner; ++in) dst[in] *= inv;
    }
    return make_result("mean", std::move(out_shape), std::move(out), {x}, [x, s, inv](Node& self) {
        double* gx = grad_of(x);
        for (i64 o = 0; o < s.outer; ++o) {
            const double* g = self.grad.data() + o * s.inner;
            for (i64 k = 0; k < s.len; ++k) {
                double* dst = gx + (o * s.len + k) * s.inner;
                for (i64 in = 0; in < s.inner; ++in) dst[in] += g[in] * inv;
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    check_finite_inputs("sum", {&x});
    double total = 0.0;
    for (double v : x.data()) total += v;
    return make_result("sum", {}, {total}, {x}, [x](Node& self) {
        double* gx = grad_of(x);
        const double g = self.grad[0];
        for (i64 i = 0; i < x.numel(); ++i) gx[i] += g;
    });
}

Tensor index_select(const Tensor& x, std::int64_t axis, std::vector<std::int64_t> index) {
    check_finite_inputs("index_select", {&x});
    axis = normalize_axis("index_select", axis, x.rank());
    const AxisSplit s = split_at(x.shape(), axis);
    for (i64 i : index) {
        if (i < 0 || i >= s.len) {
            throw std::out_of_range("index_select: index " + std::to_string(i) + " out of range for axis " +
                                    std::to_string(axis) + " of " + shape_str(x.shape()));
        }
    }
    Shape out_shape = x.shape();
    const i64 n = static_cast<i64>(index.size());
    out_shape[axis] = n;
    const auto px = x.data();
    std::vector<double> out(static_cast<std::size_t>(s.outer * n * s.inner));
    for (i64 o = 0; o < s.outer; ++o) {
        for (i64 k = 0; k < n; ++k) {
            std::copy_n(px.data() + (o * s.len + index[k]) * s.inner, s.inner, out.data() + (o * n + k) * s.inner);
        }
    }
    return make_result("index_select", std::move(out_shape), std::move(out), {x},
                       [x, s, n, index = std::move(index)](Node& self) {
        double* gx = grad_of(x);
        for (i64 o = 0; o < s.outer; ++o) {
            for (i64 k = 0; k < n; ++k) {
                const double* g = self.grad.data() + (o * n + k) * s.inner;
                double* dst = gx + (o * s.len + index[k]) * s.inner;
                for (i64 in = 0; in < s.inner; ++in) dst[in] += g[in];
            }
        }
    });
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
    axis = normalize_axis("slice", axis, x.rank());
    const i64 len = x.shape()[axis];
    if (start < 0 || length < 0 || start + length > len) {
        throw std::out_of_range("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") out of bounds for " + shape_str(x.shape()));
    }
    std::vector<i64> idx(static_cast<std::size_t>(length));
    std::iota(idx.begin(), idx.end(), start);
    return index_select(x, axis, std::move(idx));
}

Tensor roll(const Tensor& x, std::int64_t axis, std::int64_t shift) {
    axis = normalize_axis("roll", axis, x.rank());
    const i64 n = x.shape()[axis];
    if (n == 0 || shift % n == 0) return x;
    std::vector<i64> idx(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) idx[i] = (((i - shift) % n) + n) % n;
    return index_select(x, axis, std::move(idx));
}

Tensor pad_replicate(const Tensor& x, std::int64_t axis, std::int64_t new_length) {
    axis = normalize_axis("pad_replicate", axis, x.rank());
    const i64 n = x.shape()[axis];
    if (new_length == n) return x;
    if (n == 0 || new_length < n) {
        throw std::invalid_argument("pad_replicate: cannot pad axis of length " + std::to_string(n) + " to " +
                                    std::to_string(new_length));
    }
    std::vector<i64> idx(static_cast<std::size_t>(new_length));
    for (i64 i = 0; i < new_length; ++i) idx[i] = std::min(i, n - 1);
    return index_select(x, axis, std::move(idx));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) throw shape_error("linear", x.shape(), weight.shape());
    Tensor y;
    if (x.rank() == 2) {
        y = matmul(x, weight);
    } else {
        Shape flat{x.numel() / weight.dim(0), weight.dim(0)};
        Shape out_shape = x.shape();
        out_shape.back() = weight.dim(1);
        y = reshape(matmul(reshape(x, flat), weight), out_shape);
    }
    return bias.defined() ? add(y, bias) : y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_finite_inputs("cross_entropy", {&logits});
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [B, C], got " + shape_str(logits.shape()));
    const i64 B = logits.dim(0);
    const i64 C = logits.dim(1);
    if (B < 1) throw std::invalid_argument("cross_entropy: empty batch");
    if (static_cast<i64>(labels.size()) != B) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                    std::to_string(B));
    }
    for (int y : labels) {
        if (y < 0 || y >= C) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C - 1) + "]");
    }
    const auto pl = logits.data();
    std::vector<double> probs(pl.size());
    double loss = 0.0;
    for (i64 b = 0; b < B; ++b) {
        const double* row = pl.data() + b * C;
        double mx = row[0];
        for (i64 c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double total = 0.0;
        for (i64 c = 0; c < C; ++c) total += std::exp(row[c] - mx);
        const double lse = mx + std::log(total);
        loss += lse - row[labels[b]];
        for (i64 c = 0; c < C; ++c) probs[b * C + c] = std::exp(row[c] - lse);
    }
    loss /= static_cast<double>(B);
    std::vector<int> ys(labels.begin(), labels.end());
    return make_result("cross_entropy", {}, {loss}, {logits},
                       [logits, B, C, probs = std::move(probs), ys = std::move(ys)](Node& self) {
        double* gl = grad_of(logits);
        const double g = self.grad[0] / static_cast<double>(B);
        for (i64 b = 0; b < B; ++b) {
            for (i64 c = 0; c < C; ++c) {
                gl[b * C + c] += g * (probs[b * C + c] - (c == ys[b] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace dub3d
