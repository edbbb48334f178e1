#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "apiavis/tensor.hpp"

namespace apiavis::ad {

/* Reverse-mode autodiff over Tensors. Every op builds a Node that remembers
 * its parents and how to push its output gradient back into them; backward()
 * walks the recorded graph once in reverse topological order.
 *
 * Writer contract: one thread records/backprops over a given set of leaves
 * at a time. Concurrent read-only forward passes (grad mode off) are safe. */

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily; same shape as value once touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_op;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/* Global (per-thread) switch: with grad mode off no graph is recorded, so
 * inference never retains intermediate tensors. */
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return n;
}

template <typename T>
Var<T> leaf(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

template <typename T>
void ensure_grad(Node<T>& n) {
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
}

/* Wire a freshly computed value into the graph. Records parents and the
 * backward closure only when some parent wants gradients and grad mode is
 * on; otherwise the node is a free-standing constant and the inputs can be
 * released as soon as the caller drops them. */
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_op) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p->requires_grad) {
                n->requires_grad = true;
                break;
            }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_op = std::move(backward_op);
    }
    return n;
}

/* Accumulate loss gradients into every reachable node that wants them.
 * Repeated calls over fresh graphs keep accumulating into the shared
 * leaves until their grads are zeroed. */
template <typename T>
void backward(const Var<T>& loss) {
    if (loss->value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    loss->value.shape_str());
    if (!loss->requires_grad) return;  // nothing reachable wants gradients

    // iterative post-order DFS: parents first, node last
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    ensure_grad(*loss);
    loss->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward_op) continue;
        if (n->grad.size() == 0) continue;  // no gradient ever reached this node
        for (auto& p : n->parents)
            if (p->requires_grad) ensure_grad(*p);
        n->backward_op(*n);
    }
}

/* ---- elementwise and linear-algebra primitives ---- */

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "ad::add");
    Tensor<T> out = apiavis::add(a->value, b->value);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) add_inplace(a->grad, n.grad);
        if (b->requires_grad) add_inplace(b->grad, n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "ad::sub");
    Tensor<T> out = apiavis::sub(a->value, b->value);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) add_inplace(a->grad, n.grad);
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "ad::mul");
    Tensor<T> out = apiavis::mul(a->value, b->value);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
    });
}

/* y = s * x + c, elementwise */
template <typename T>
Var<T> affine(const Var<T>& x, T s, T c) {
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * out[i] + c;
    return make_node<T>(std::move(out), {x}, [x, s](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad[i] += s * n.grad[i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
    return affine(x, s, T(0));
}

template <typename T>
Var<T> negate(const Var<T>& x) {
    return affine(x, T(-1), T(0));
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    return make_node<T>(Tensor<T>::scalar(acc), {x}, [x](Node<T>& n) {
        const T g = n.grad[0];
        for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const T inv = T(1) / static_cast<T>(x->value.size());
    T acc = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    return make_node<T>(Tensor<T>::scalar(acc * inv), {x}, [x, inv](Node<T>& n) {
        const T g = n.grad[0] * inv;
        for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<std::size_t> shape) {
    if (Tensor<T>::numel(shape) != x->value.size())
        throw std::invalid_argument("ad::reshape: element count mismatch");
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i];
    return make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad[i] += n.grad[i];
    });
}

/* 2-D matrix product: [m x k] * [k x n] */
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("ad::matmul: incompatible shapes " + a->value.shape_str() +
                                    " and " + b->value.shape_str());
    const std::size_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<T> out({m, n});
    const T* A = a->value.data();
    const T* B = b->value.data();
    T* C = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            const T* brow = B + p * n;
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    return make_node<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
        const T* G = nd.grad.data();
        if (a->requires_grad) {  // dA = G * B^T
            const T* B = b->value.data();
            T* dA = a->grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = 0;
                    const T* grow = G + i * n;
                    const T* brow = B + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    dA[i * k + p] += acc;
                }
        }
        if (b->requires_grad) {  // dB = A^T * G
            const T* A = a->value.data();
            T* dB = b->grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = A[i * k + p];
                    const T* grow = G + i * n;
                    T* brow = dB + p * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

template <typename T>
Var<T> transpose2d(const Var<T>& x) {
    if (x->value.ndim() != 2) throw std::invalid_argument("ad::transpose2d: need 2-D input");
    const std::size_t m = x->value.dim(0), n = x->value.dim(1);
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x->value[i * n + j];
    return make_node<T>(std::move(out), {x}, [x, m, n](Node<T>& nd) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += nd.grad[j * m + i];
    });
}

/* Concatenate 2-D blocks along dim 0. */
template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1))
        throw std::invalid_argument("ad::concat_rows: column mismatch");
    const std::size_t ra = a->value.dim(0), rb = b->value.dim(0), c = a->value.dim(1);
    Tensor<T> out({ra + rb, c});
    for (std::size_t i = 0; i < ra * c; ++i) out[i] = a->value[i];
    for (std::size_t i = 0; i < rb * c; ++i) out[ra * c + i] = b->value[i];
    return make_node<T>(std::move(out), {a, b}, [a, b, ra, rb, c](Node<T>& nd) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < ra * c; ++i) a->grad[i] += nd.grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < rb * c; ++i) b->grad[i] += nd.grad[ra * c + i];
    });
}

/* Concatenate B x C x H x W blocks along the channel dim. */
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("ad::concat_channels: empty input");
    const auto& s0 = xs[0]->value.shape();
    if (s0.size() != 4) throw std::invalid_argument("ad::concat_channels: need 4-D inputs");
    const std::size_t B = s0[0], H = s0[2], W = s0[3];
    std::size_t C = 0;
    for (const auto& x : xs) {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[0] != B || s[2] != H || s[3] != W)
            throw std::invalid_argument("ad::concat_channels: shape mismatch");
        C += s[1];
    }
    Tensor<T> out({B, C, H, W});
    const std::size_t hw = H * W;
    std::size_t c0 = 0;
    for (const auto& x : xs) {
        const std::size_t xc = x->value.dim(1);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < xc * hw; ++i)
                out[(b * C + c0) * hw + i] = x->value[b * xc * hw + i];
        c0 += xc;
    }
    return make_node<T>(std::move(out), xs, [xs, B, C, hw](Node<T>& nd) {
        std::size_t c0 = 0;
        for (const auto& x : xs) {
            const std::size_t xc = x->value.dim(1);
            if (x->requires_grad)
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t i = 0; i < xc * hw; ++i)
                        x->grad[b * xc * hw + i] += nd.grad[(b * C + c0) * hw + i];
            c0 += xc;
        }
    });
}

/* Contiguous channel slice [c0, c0+len) of a B x C x H x W block. */
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t c0, std::size_t len) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || c0 + len > s[1])
        throw std::invalid_argument("ad::slice_channels: bad range");
    const std::size_t B = s[0], C = s[1], hw = s[2] * s[3];
    Tensor<T> out({B, len, s[2], s[3]});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < len * hw; ++i)
            out[b * len * hw + i] = x->value[(b * C + c0) * hw + i];
    return make_node<T>(std::move(out), {x}, [x, B, C, c0, len, hw](Node<T>& nd) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < len * hw; ++i)
                x->grad[(b * C + c0) * hw + i] += nd.grad[b * len * hw + i];
    });
}

/* Row-broadcast helpers for [B x N] against a length-N vector. */
template <typename T>
Var<T> sub_rowvec(const Var<T>& x, const Var<T>& v) {
    if (x->value.ndim() != 2 || v->value.size() != x->value.dim(1))
        throw std::invalid_argument("ad::sub_rowvec: shape mismatch");
    const std::size_t B = x->value.dim(0), N = x->value.dim(1);
    Tensor<T> out = x->value;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < N; ++j) out[b * N + j] -= v->value[j];
    return make_node<T>(std::move(out), {x, v}, [x, v, B, N](Node<T>& nd) {
        if (x->requires_grad) add_inplace(x->grad, nd.grad);
        if (v->requires_grad)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < N; ++j) v->grad[j] -= nd.grad[b * N + j];
    });
}

template <typename T>
Var<T> mul_rowvec(const Var<T>& x, const Var<T>& v) {
    if (x->value.ndim() != 2 || v->value.size() != x->value.dim(1))
        throw std::invalid_argument("ad::mul_rowvec: shape mismatch");
    const std::size_t B = x->value.dim(0), N = x->value.dim(1);
    Tensor<T> out = x->value;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < N; ++j) out[b * N + j] *= v->value[j];
    return make_node<T>(std::move(out), {x, v}, [x, v, B, N](Node<T>& nd) {
        if (x->requires_grad)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < N; ++j)
                    x->grad[b * N + j] += nd.grad[b * N + j] * v->value[j];
        if (v->requires_grad)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < N; ++j)
                    v->grad[j] += nd.grad[b * N + j] * x->value[b * N + j];
    });
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < lo) out[i] = lo;
    return make_node<T>(std::move(out), {x}, [x, lo](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            if (x->value[i] > lo) x->grad[i] += nd.grad[i];
    });
}

}  // namespace apiavis::ad
