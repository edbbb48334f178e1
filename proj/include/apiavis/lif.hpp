#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <utility>

#include "apiavis/nn_ops.hpp"
#include "apiavis/rng.hpp"

namespace apiavis {

enum class ResetMode { subtract, zero };

/* Leaky integrate-and-fire dynamics, discretized with the exponential-Euler
 * step U <- beta*U + (1-beta)*R*I, beta = exp(-dt/tau). */
template <typename T>
struct LIFConfig {
    T beta = T(0.95);
    T threshold = T(1);
    T r = T(1);
    ResetMode reset = ResetMode::subtract;
    T surrogate_k = T(25);
};

/* In-place membrane update without graph recording; spikes land in `spikes`.
 * Used by analytics and unit oracles. */
template <typename T>
void lif_step_plain(Tensor<T>& u, const Tensor<T>& current, const LIFConfig<T>& cfg,
                    Tensor<T>& spikes) {
    check_same_shape(u, current, "lif_step_plain");
    if (!spikes.same_shape(u)) spikes = Tensor<T>(u.shape());
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = cfg.beta * u[i] + (T(1) - cfg.beta) * cfg.r * current[i];
        const bool fire = u[i] >= cfg.threshold;
        spikes[i] = fire ? T(1) : T(0);
        if (fire) u[i] = cfg.reset == ResetMode::subtract ? u[i] - cfg.threshold : T(0);
    }
}

namespace ad {

/* One differentiable LIF step, fused so a timestep adds only two graph nodes
 * (spikes and next membrane) regardless of layer size. The hard step uses a
 * fast-sigmoid surrogate 1/(1+k|x|)^2 in the backward pass, applied to the
 * reset term as well. theta may be empty (scalar cfg.threshold) or a length-N
 * vector broadcast across the rows of a [B x N] input. */
template <typename T>
std::pair<Var<T>, Var<T>> lif_update(const Var<T>& u_prev, const Var<T>& current,
                                     const LIFConfig<T>& cfg, const Var<T>& theta = {}) {
    check_same_shape(u_prev->value, current->value, "lif_update");
    const std::size_t n = u_prev->value.size();
    std::size_t cols = n;  // broadcast width for vector theta
    if (theta) {
        if (u_prev->value.ndim() != 2 || theta->value.size() != u_prev->value.dim(1))
            throw std::invalid_argument("lif_update: per-neuron theta needs [B x N] input");
        cols = u_prev->value.dim(1);
    }

    const T keep = cfg.beta, gain = (T(1) - cfg.beta) * cfg.r;
    // pre-reset membrane is only needed by the zero-reset backward pass
    auto u_new = cfg.reset == ResetMode::zero
                     ? std::make_shared<Tensor<T>>(u_prev->value.shape())
                     : std::shared_ptr<Tensor<T>>{};
    auto x = std::make_shared<Tensor<T>>(u_prev->value.shape());  // U - theta
    Tensor<T> spikes(u_prev->value.shape());
    Tensor<T> u_next(u_prev->value.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T th = theta ? theta->value[i % cols] : cfg.threshold;
        const T un = keep * u_prev->value[i] + gain * current->value[i];
        if (u_new) (*u_new)[i] = un;
        (*x)[i] = un - th;
        const bool fire = un >= th;
        spikes[i] = fire ? T(1) : T(0);
        u_next[i] = cfg.reset == ResetMode::subtract ? (fire ? un - th : un)
                                                     : (fire ? T(0) : un);
    }

    const T k = cfg.surrogate_k;
    auto sg = [k](T xv) {
        const T d = T(1) + k * std::abs(xv);
        return T(1) / (d * d);
    };

    std::vector<Var<T>> parents{u_prev, current};
    if (theta) parents.push_back(theta);

    auto spike_node = make_node<T>(
        std::move(spikes), parents, [u_prev, current, theta, x, sg, keep, gain, cols](Node<T>& nd) {
            for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                const T d = nd.grad[i] * sg((*x)[i]);
                if (u_prev->requires_grad) u_prev->grad[i] += keep * d;
                if (current->requires_grad) current->grad[i] += gain * d;
                if (theta && theta->requires_grad) theta->grad[i % cols] -= d;
            }
        });

    auto next_node = make_node<T>(
        std::move(u_next), std::move(parents),
        [u_prev, current, theta, u_new, x, sg, keep, gain, cols, cfg](Node<T>& nd) {
            for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                const T gu = nd.grad[i];
                const T th = theta ? theta->value[i % cols] : cfg.threshold;
                const T s = (*x)[i] >= T(0) ? T(1) : T(0);
                const T sp = sg((*x)[i]);
                T du_new, dtheta;
                if (cfg.reset == ResetMode::subtract) {
                    du_new = gu * (T(1) - th * sp);
                    dtheta = gu * (-s + th * sp);
                } else {
                    du_new = gu * ((T(1) - s) - (*u_new)[i] * sp);
                    dtheta = gu * (*u_new)[i] * sp;
                }
                if (u_prev->requires_grad) u_prev->grad[i] += keep * du_new;
                if (current->requires_grad) current->grad[i] += gain * du_new;
                if (theta && theta->requires_grad) theta->grad[i % cols] += dtheta;
            }
        });

    return {spike_node, next_node};
}

}  // namespace ad

/* Binary spike frames, timestep-major: [T x B x ...]. */
template <typename T>
struct SpikeRaster {
    Tensor<T> spikes;
    std::size_t timesteps = 0;

    std::size_t frame_size() const {
        return timesteps == 0 ? 0 : spikes.size() / timesteps;
    }

    Tensor<T> frame(std::size_t t) const {
        if (t >= timesteps) throw std::out_of_range("SpikeRaster: frame index");
        std::vector<std::size_t> shape(spikes.shape().begin() + 1, spikes.shape().end());
        Tensor<T> out(shape);
        const std::size_t fs = frame_size();
        for (std::size_t i = 0; i < fs; ++i) out[i] = spikes[t * fs + i];
        return out;
    }

    /* Mean over timesteps: the rate code. */
    Tensor<T> rate() const {
        std::vector<std::size_t> shape(spikes.shape().begin() + 1, spikes.shape().end());
        Tensor<T> out(shape);
        const std::size_t fs = frame_size();
        for (std::size_t t = 0; t < timesteps; ++t)
            for (std::size_t i = 0; i < fs; ++i) out[i] += spikes[t * fs + i];
        for (std::size_t i = 0; i < fs; ++i) out[i] /= static_cast<T>(timesteps);
        return out;
    }
};

/* Rate-code an intensity image into Bernoulli spike frames: a pixel of
 * intensity p fires each timestep independently with probability
 * p * rate_scale. Draw order is fixed (timestep-major, then row-major
 * pixels) so a seed pins the exact raster. */
template <typename T>
SpikeRaster<T> bernoulli_encode(const Tensor<T>& img, std::size_t timesteps, T rate_scale,
                                std::uint64_t seed) {
    if (timesteps == 0) throw std::invalid_argument("bernoulli_encode: timesteps must be positive");
    std::vector<std::size_t> shape{timesteps};
    for (auto d : img.shape()) shape.push_back(d);
    SpikeRaster<T> raster{Tensor<T>(std::move(shape)), timesteps};
    Rng rng(seed);
    bool warned = false;
    for (std::size_t t = 0; t < timesteps; ++t)
        for (std::size_t i = 0; i < img.size(); ++i) {
            T p = img[i] * rate_scale;
            if (p > T(1)) {
                if (!warned) {
                    std::fprintf(stderr,
                                 "bernoulli_encode: clamping spike probability %g to 1\n",
                                 static_cast<double>(p));
                    warned = true;
                }
                p = T(1);
            }
            raster.spikes[t * img.size() + i] =
                rng.uniform() < static_cast<double>(p) ? T(1) : T(0);
        }
    return raster;
}

}  // namespace apiavis
