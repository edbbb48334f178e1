#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "apiavis/autodiff.hpp"

namespace apiavis::ad {

/* Output rows/cols o with 0 <= o*stride + off < in_sz, as [lo, hi). */
inline std::pair<std::size_t, std::size_t> conv_valid_range(std::ptrdiff_t off, std::size_t in_sz,
                                                            std::size_t stride,
                                                            std::size_t out_sz) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::size_t lo = 0;
    if (off < 0) lo = static_cast<std::size_t>((-off + s - 1) / s);
    std::size_t hi = 0;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in_sz) - 1 - off;
    if (last >= 0) hi = std::min(out_sz, static_cast<std::size_t>(last / s) + 1);
    if (lo > hi) lo = hi;
    return {lo, hi};
}

/* Cross-correlation (no kernel flip), zero padding.
 * x: [B,Cin,H,W], w: [Cout,Cin,KH,KW], bias: [Cout] or nullptr. */
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv2d: need 4-D input and kernel");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: input has " + std::to_string(xs[1]) +
                                    " channels but kernel expects " + std::to_string(ws[1]));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const std::size_t Cout = ws[0], KH = ws[2], KW = ws[3];
    if (bias && bias->value.size() != Cout)
        throw std::invalid_argument("conv2d: bias size mismatch");
    if (H + 2 * padding < KH || W + 2 * padding < KW)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - KW) / stride + 1;
    const auto p = static_cast<std::ptrdiff_t>(padding);

    Tensor<T> out({B, Cout, Ho, Wo});
    const T* X = x->value.data();
    const T* K = w->value.data();
    T* O = out.data();
    if (bias)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
                const T bv = bias->value[co];
                T* plane = O + (b * Cout + co) * Ho * Wo;
                for (std::size_t i = 0; i < Ho * Wo; ++i) plane[i] = bv;
            }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t i = 0; i < KH; ++i) {
                    const auto [oh_lo, oh_hi] =
                        conv_valid_range(static_cast<std::ptrdiff_t>(i) - p, H, stride, Ho);
                    for (std::size_t j = 0; j < KW; ++j) {
                        const T wv = K[((co * Cin + ci) * KH + i) * KW + j];
                        const auto [ow_lo, ow_hi] =
                            conv_valid_range(static_cast<std::ptrdiff_t>(j) - p, W, stride, Wo);
                        const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(j) - p;
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const std::size_t ih = oh * stride + i - padding;
                            const T* xrow = X + ((b * Cin + ci) * H + ih) * W;
                            T* orow = O + ((b * Cout + co) * Ho + oh) * Wo;
                            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                                orow[ow] +=
                                    wv * xrow[static_cast<std::ptrdiff_t>(ow * stride) + off_w];
                        }
                    }
                }

    std::vector<Var<T>> parents = bias ? std::vector<Var<T>>{x, w, bias}
                                       : std::vector<Var<T>>{x, w};
    return make_node<T>(
        std::move(out), std::move(parents),
        [x, w, bias, B, Cin, H, W, Cout, KH, KW, Ho, Wo, stride, p, padding](Node<T>& nd) {
            const T* G = nd.grad.data();
            if (bias && bias->requires_grad) {
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const T* plane = G + (b * Cout + co) * Ho * Wo;
                        T acc = 0;
                        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += plane[i];
                        bias->grad[co] += acc;
                    }
            }
            const T* X = x->value.data();
            const T* K = w->value.data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t i = 0; i < KH; ++i) {
                            const auto [oh_lo, oh_hi] =
                                conv_valid_range(static_cast<std::ptrdiff_t>(i) - p, H, stride, Ho);
                            for (std::size_t j = 0; j < KW; ++j) {
                                const auto [ow_lo, ow_hi] = conv_valid_range(
                                    static_cast<std::ptrdiff_t>(j) - p, W, stride, Wo);
                                const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(j) - p;
                                const std::size_t widx = ((co * Cin + ci) * KH + i) * KW + j;
                                const T wv = K[widx];
                                T wacc = 0;
                                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                    const std::size_t ih = oh * stride + i - padding;
                                    const T* grow = G + ((b * Cout + co) * Ho + oh) * Wo;
                                    const std::size_t xbase = ((b * Cin + ci) * H + ih) * W;
                                    const T* xrow = X + xbase;
                                    if (w->requires_grad)
                                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                                            wacc +=
                                                grow[ow] *
                                                xrow[static_cast<std::ptrdiff_t>(ow * stride) +
                                                     off_w];
                                    if (x->requires_grad) {
                                        T* dxrow = x->grad.data() + xbase;
                                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                                            dxrow[static_cast<std::ptrdiff_t>(ow * stride) +
                                                  off_w] += wv * grow[ow];
                                    }
                                }
                                if (w->requires_grad) w->grad[widx] += wacc;
                            }
                        }
        });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride, std::size_t padding) {
    return conv2d(x, w, Var<T>{}, stride, padding);
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0) out[i] *= slope;
    return make_node<T>(std::move(out), {x}, [x, slope](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            x->grad[i] += nd.grad[i] * (x->value[i] > 0 ? T(1) : slope);
    });
}

/* Channel-window response normalization:
 * out_c = x_c * (k + (alpha/n) * sum_{c' in [c-n/2, c+n/2] clamped} x_{c'}^2)^(-beta) */
template <typename T>
Var<T> local_response_norm(const Var<T>& x, int n, T k, T alpha, T beta) {
    if (n <= 0) throw std::invalid_argument("local_response_norm: window size must be positive");
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("local_response_norm: need 4-D input");
    const std::size_t B = s[0], C = s[1], hw = s[2] * s[3];
    const std::size_t half = static_cast<std::size_t>(n) / 2;
    const T an = alpha / static_cast<T>(n);

    auto D = std::make_shared<Tensor<T>>(x->value.shape());  // denominator base
    auto M = std::make_shared<Tensor<T>>(x->value.shape());  // D^-beta
    const T* X = x->value.data();
    const bool fast = (beta == T(0.75));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t lo = c >= half ? c - half : 0;
            const std::size_t hi = std::min(C - 1, c + half);
            T* drow = D->data() + (b * C + c) * hw;
            T* mrow = M->data() + (b * C + c) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                T acc = 0;
                for (std::size_t c2 = lo; c2 <= hi; ++c2) {
                    const T v = X[(b * C + c2) * hw + p];
                    acc += v * v;
                }
                const T d = k + an * acc;
                drow[p] = d;
                if (fast) {
                    const T t = std::sqrt(d);
                    mrow[p] = T(1) / (t * std::sqrt(t));
                } else {
                    mrow[p] = std::pow(d, -beta);
                }
            }
        }
    Tensor<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * (*M)[i];

    return make_node<T>(std::move(out), {x}, [x, D, M, B, C, hw, half, an, beta](Node<T>& nd) {
        // dx_e = g_e*M_e - 2*beta*(alpha/n)*x_e * sum_{c in window(e)} g_c*x_c*M_c/D_c
        const T* G = nd.grad.data();
        const T* X = x->value.data();
        Tensor<T> P(x->value.shape());
        for (std::size_t i = 0; i < P.size(); ++i) P[i] = G[i] * X[i] * (*M)[i] / (*D)[i];
        const T c2b = T(2) * beta * an;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t lo = c >= half ? c - half : 0;
                const std::size_t hi = std::min(C - 1, c + half);
                T* dxrow = x->grad.data() + (b * C + c) * hw;
                const std::size_t base = (b * C + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    T acc = 0;
                    for (std::size_t c2 = lo; c2 <= hi; ++c2) acc += P[(b * C + c2) * hw + p];
                    dxrow[p] += G[base + p] * (*M)[base + p] - c2b * X[base + p] * acc;
                }
            }
    });
}

/* Per-sample, per-group standardization over (C/groups, H, W), then per-channel affine. */
template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& delta,
                  T eps) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("group_norm: need 4-D input");
    const std::size_t B = s[0], C = s[1], hw = s[2] * s[3];
    if (groups == 0 || C % groups != 0)
        throw std::invalid_argument("group_norm: channel count " + std::to_string(C) +
                                    " not divisible by groups " + std::to_string(groups));
    if (gamma->value.size() != C || delta->value.size() != C)
        throw std::invalid_argument("group_norm: affine param size mismatch");
    const std::size_t cpg = C / groups;
    const std::size_t gsz = cpg * hw;

    auto mean = std::make_shared<std::vector<T>>(B * groups);
    auto istd = std::make_shared<std::vector<T>>(B * groups);
    const T* X = x->value.data();
    Tensor<T> out(x->value.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < groups; ++g) {
            const T* gx = X + (b * C + g * cpg) * hw;
            T m = 0;
            for (std::size_t i = 0; i < gsz; ++i) m += gx[i];
            m /= static_cast<T>(gsz);
            T v = 0;
            for (std::size_t i = 0; i < gsz; ++i) {
                const T d = gx[i] - m;
                v += d * d;
            }
            v /= static_cast<T>(gsz);  // biased variance
            const T is = T(1) / std::sqrt(v + eps);
            (*mean)[b * groups + g] = m;
            (*istd)[b * groups + g] = is;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t c = g * cpg + cc;
                const T ga = gamma->value[c], de = delta->value[c];
                const T* xrow = X + (b * C + c) * hw;
                T* orow = out.data() + (b * C + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) orow[p] = ga * (xrow[p] - m) * is + de;
            }
        }

    return make_node<T>(std::move(out), {x, gamma, delta},
                        [x, gamma, delta, mean, istd, B, C, hw, groups, cpg, gsz](Node<T>& nd) {
                            const T* G = nd.grad.data();
                            const T* X = x->value.data();
                            for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t g = 0; g < groups; ++g) {
                                    const T m = (*mean)[b * groups + g];
                                    const T is = (*istd)[b * groups + g];
                                    T sum1 = 0, sum2 = 0;
                                    for (std::size_t cc = 0; cc < cpg; ++cc) {
                                        const std::size_t c = g * cpg + cc;
                                        const T ga = gamma->value[c];
                                        const std::size_t base = (b * C + c) * hw;
                                        for (std::size_t p = 0; p < hw; ++p) {
                                            const T xh = (X[base + p] - m) * is;
                                            const T dxh = G[base + p] * ga;
                                            sum1 += dxh;
                                            sum2 += dxh * xh;
                                            if (gamma->requires_grad)
                                                gamma->grad[c] += G[base + p] * xh;
                                            if (delta->requires_grad)
                                                delta->grad[c] += G[base + p];
                                        }
                                    }
                                    if (!x->requires_grad) continue;
                                    const T inv_n = T(1) / static_cast<T>(gsz);
                                    for (std::size_t cc = 0; cc < cpg; ++cc) {
                                        const std::size_t c = g * cpg + cc;
                                        const T ga = gamma->value[c];
                                        const std::size_t base = (b * C + c) * hw;
                                        for (std::size_t p = 0; p < hw; ++p) {
                                            const T xh = (X[base + p] - m) * is;
                                            const T dxh = G[base + p] * ga;
                                            x->grad[base + p] +=
                                                is * (dxh - inv_n * sum1 - xh * inv_n * sum2);
                                        }
                                    }
                                }
                        });
}

/* Mean across channels: [B,C,H,W] -> [B,1,H,W]. */
template <typename T>
Var<T> avg_pool_channels(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || s[1] == 0) throw std::invalid_argument("avg_pool_channels: need 4-D input");
    const std::size_t B = s[0], C = s[1], hw = s[2] * s[3];
    const T inv = T(1) / static_cast<T>(C);
    Tensor<T> out({B, 1, s[2], s[3]});
    const T* X = x->value.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xrow = X + (b * C + c) * hw;
            T* orow = out.data() + b * hw;
            for (std::size_t p = 0; p < hw; ++p) orow[p] += xrow[p] * inv;
        }
    return make_node<T>(std::move(out), {x}, [x, B, C, hw, inv](Node<T>& nd) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                T* dxrow = x->grad.data() + (b * C + c) * hw;
                const T* grow = nd.grad.data() + b * hw;
                for (std::size_t p = 0; p < hw; ++p) dxrow[p] += grow[p] * inv;
            }
    });
}

/* Replicate a single channel: [B,1,H,W] -> [B,C,H,W]. */
template <typename T>
Var<T> repeat_channel(const Var<T>& x, std::size_t C) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || s[1] != 1) throw std::invalid_argument("repeat_channel: need [B,1,H,W]");
    const std::size_t B = s[0], hw = s[2] * s[3];
    Tensor<T> out({B, C, s[2], s[3]});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < hw; ++p) out[(b * C + c) * hw + p] = x->value[b * hw + p];
    return make_node<T>(std::move(out), {x}, [x, B, C, hw](Node<T>& nd) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < hw; ++p)
                    x->grad[b * hw + p] += nd.grad[(b * C + c) * hw + p];
    });
}

/* Linear map with a fixed elementwise weight mask: out = x (w o m)^T + bias.
 * x: [B,N], w: [K,N], mask: [K,N] of {0,1}, bias: [K] or nullptr.
 * The mask gates both the forward product and dW, so masked-out weights
 * receive exactly zero gradient and stay at their initial value. */
template <typename T>
Var<T> masked_linear(const Var<T>& x, const Var<T>& w,
                     std::shared_ptr<const Tensor<T>> mask, const Var<T>& bias) {
    if (x->value.ndim() != 2 || w->value.ndim() != 2)
        throw std::invalid_argument("masked_linear: need 2-D input and weight");
    if (!mask || !mask->same_shape(w->value))
        throw std::invalid_argument("masked_linear: mask/weight shape mismatch");
    const std::size_t B = x->value.dim(0), N = x->value.dim(1), K = w->value.dim(0);
    if (w->value.dim(1) != N) throw std::invalid_argument("masked_linear: weight/input dim mismatch");
    if (bias && bias->value.size() != K)
        throw std::invalid_argument("masked_linear: bias size mismatch");

    Tensor<T> out({B, K});
    const T* X = x->value.data();
    const T* W = w->value.data();
    const T* M = mask->data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
            T acc = bias ? bias->value[k] : T(0);
            const T* wrow = W + k * N;
            const T* mrow = M + k * N;
            const T* xrow = X + b * N;
            for (std::size_t n = 0; n < N; ++n) acc += xrow[n] * wrow[n] * mrow[n];
            out[b * K + k] = acc;
        }
    std::vector<Var<T>> parents = bias ? std::vector<Var<T>>{x, w, bias}
                                       : std::vector<Var<T>>{x, w};
    return make_node<T>(std::move(out), std::move(parents),
                        [x, w, bias, mask, B, N, K](Node<T>& nd) {
                            const T* G = nd.grad.data();
                            const T* X = x->value.data();
                            const T* W = w->value.data();
                            const T* M = mask->data();
                            for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t k = 0; k < K; ++k) {
                                    const T g = G[b * K + k];
                                    if (bias && bias->requires_grad) bias->grad[k] += g;
                                    const T* wrow = W + k * N;
                                    const T* mrow = M + k * N;
                                    const T* xrow = X + b * N;
                                    if (x->requires_grad) {
                                        T* dxrow = x->grad.data() + b * N;
                                        for (std::size_t n = 0; n < N; ++n)
                                            dxrow[n] += g * wrow[n] * mrow[n];
                                    }
                                    if (w->requires_grad) {
                                        T* dwrow = w->grad.data() + k * N;
                                        for (std::size_t n = 0; n < N; ++n)
                                            dwrow[n] += g * xrow[n] * mrow[n];
                                    }
                                }
                        });
}

/* Normalize each row of [B,N] to unit L2 norm. A zero row has no direction
 * to normalize, so it is a hard error rather than a silent NaN. */
template <typename T>
Var<T> row_l2_normalize(const Var<T>& x) {
    if (x->value.ndim() != 2) throw std::invalid_argument("row_l2_normalize: need 2-D input");
    const std::size_t B = x->value.dim(0), N = x->value.dim(1);
    auto norms = std::make_shared<std::vector<T>>(B);
    Tensor<T> out({B, N});
    for (std::size_t b = 0; b < B; ++b) {
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) acc += x->value[b * N + n] * x->value[b * N + n];
        const T nrm = std::sqrt(acc);
        if (nrm == T(0))
            throw std::domain_error("row_l2_normalize: row " + std::to_string(b) +
                                    " has zero norm");
        (*norms)[b] = nrm;
        for (std::size_t n = 0; n < N; ++n) out[b * N + n] = x->value[b * N + n] / nrm;
    }
    return make_node<T>(std::move(out), {x}, [x, norms, B, N](Node<T>& nd) {
        for (std::size_t b = 0; b < B; ++b) {
            const T* y = nd.value.data() + b * N;
            const T* g = nd.grad.data() + b * N;
            T dot = 0;
            for (std::size_t n = 0; n < N; ++n) dot += g[n] * y[n];
            const T inv = T(1) / (*norms)[b];
            T* dx = x->grad.data() + b * N;
            for (std::size_t n = 0; n < N; ++n) dx[n] += (g[n] - y[n] * dot) * inv;
        }
    });
}

/* Overwrite the diagonal of a square matrix with a constant; no gradient
 * flows through the replaced entries. */
template <typename T>
Var<T> mask_diagonal(const Var<T>& x, T value) {
    if (x->value.ndim() != 2 || x->value.dim(0) != x->value.dim(1))
        throw std::invalid_argument("mask_diagonal: need a square matrix");
    const std::size_t R = x->value.dim(0);
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < R; ++i) out[i * R + i] = value;
    return make_node<T>(std::move(out), {x}, [x, R](Node<T>& nd) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < R; ++j)
                if (i != j) x->grad[i * R + j] += nd.grad[i * R + j];
    });
}

/* Mean over rows of softmax cross-entropy against integer targets.
 * -inf logits are legal (masked-out entries get probability zero). */
template <typename T>
Var<T> cross_entropy_rows(const Var<T>& logits, const std::vector<std::size_t>& targets) {
    if (logits->value.ndim() != 2) throw std::invalid_argument("cross_entropy_rows: need 2-D logits");
    const std::size_t R = logits->value.dim(0), C = logits->value.dim(1);
    if (targets.size() != R)
        throw std::invalid_argument("cross_entropy_rows: target count mismatch");
    auto probs = std::make_shared<Tensor<T>>(std::vector<std::size_t>{R, C});
    T loss = 0;
    for (std::size_t r = 0; r < R; ++r) {
        if (targets[r] >= C) throw std::invalid_argument("cross_entropy_rows: target out of range");
        const T* row = logits->value.data() + r * C;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, row[c]);
        if (!std::isfinite(mx))
            throw std::domain_error("cross_entropy_rows: row " + std::to_string(r) +
                                    " has no finite logit");
        T z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        const T logz = std::log(z);
        for (std::size_t c = 0; c < C; ++c)
            (*probs)[r * C + c] = std::exp(row[c] - mx) / z;
        loss += mx + logz - row[targets[r]];
    }
    loss /= static_cast<T>(R);
    return make_node<T>(Tensor<T>::scalar(loss), {logits},
                        [logits, probs, targets, R, C](Node<T>& nd) {
                            const T g = nd.grad[0] / static_cast<T>(R);
                            for (std::size_t r = 0; r < R; ++r) {
                                T* drow = logits->grad.data() + r * C;
                                const T* prow = probs->data() + r * C;
                                for (std::size_t c = 0; c < C; ++c) drow[c] += g * prow[c];
                                drow[targets[r]] -= g;
                            }
                        });
}

/* Elementwise gate by a fixed 0/1 keep mask (straight-through on kept entries). */
template <typename T>
Var<T> apply_keep_mask(const Var<T>& x, Tensor<T> keep) {
    check_same_shape(x->value, keep, "apply_keep_mask");
    auto km = std::make_shared<Tensor<T>>(std::move(keep));
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*km)[i];
    return make_node<T>(std::move(out), {x}, [x, km](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i) x->grad[i] += nd.grad[i] * (*km)[i];
    });
}

/* Heaviside spike with a fast-sigmoid surrogate gradient 1/(1+k|x|)^2. */
template <typename T>
Var<T> spike_step(const Var<T>& x, T k) {
    Tensor<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] >= T(0) ? T(1) : T(0);
    return make_node<T>(std::move(out), {x}, [x, k](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            const T d = T(1) + k * std::abs(x->value[i]);
            x->grad[i] += nd.grad[i] / (d * d);
        }
    });
}

}  // namespace apiavis::ad
