#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apiavis/nn_ops.hpp"
#include "apiavis/optim.hpp"
#include "apiavis/rng.hpp"

namespace apiavis {

struct ConvSpec {
    std::size_t in_ch, out_ch, kernel, stride, padding;
};

/* Full model architecture. Channel counts are configurable but validated:
 * the lobula must emit exactly 128 feature channels, and the stage widths
 * must agree with the concatenations the pipeline performs. */
struct ArchConfig {
    std::size_t input_hw = 75;
    ConvSpec retina{2, 16, 3, 1, 1};
    ConvSpec lamina{32, 32, 3, 2, 1};
    ConvSpec medulla{64, 64, 3, 2, 1};
    ConvSpec lobula{64, 128, 3, 2, 1};

    int lrn_size = 5;
    double lrn_k = 1.0;
    double lrn_alpha = 1e-4;
    double lrn_beta = 0.75;
    double leaky_slope = 0.01;
    std::size_t gn_groups = 8;  // per layer: min(gn_groups, out_ch), must divide
    double gn_eps = 1e-5;

    std::size_t kc_dim = 1024;
    std::size_t kc_fan_in = 10;
    bool kc_bias = true;

    double akwta_alpha = 0.9;
    double akwta_rho = 0.05;

    static std::size_t conv_out(std::size_t in, const ConvSpec& c) {
        if (in + 2 * c.padding < c.kernel)
            throw std::invalid_argument("ArchConfig: kernel exceeds padded input");
        return (in + 2 * c.padding - c.kernel) / c.stride + 1;
    }

    std::size_t groups_for(std::size_t channels) const {
        return channels < gn_groups ? channels : gn_groups;
    }

    /* Spatial side length of the lobula output. */
    std::size_t lobula_hw() const {
        std::size_t h = conv_out(input_hw, retina);
        h = conv_out(h, lamina);
        h = conv_out(h, medulla);
        return conv_out(h, lobula);
    }

    std::size_t d_vpn() const {
        const std::size_t h = lobula_hw();
        return h * h;
    }

    void validate() const {
        auto check_layer = [&](const char* name, const ConvSpec& c) {
            if (c.kernel == 0 || c.stride == 0 || c.in_ch == 0 || c.out_ch == 0)
                throw std::invalid_argument(std::string("ArchConfig: ") + name +
                                            " has a zero dimension");
            const std::size_t g = groups_for(c.out_ch);
            if (c.out_ch % g != 0)
                throw std::invalid_argument(std::string("ArchConfig: ") + name + " channels " +
                                            std::to_string(c.out_ch) +
                                            " not divisible by group count " + std::to_string(g));
        };
        check_layer("retina", retina);
        check_layer("lamina", lamina);
        check_layer("medulla", medulla);
        check_layer("lobula", lobula);
        if (retina.in_ch != 2)
            throw std::invalid_argument("ArchConfig: retina must take the 2 photoreceptor channels");
        if (lamina.in_ch != 2 * retina.out_ch)
            throw std::invalid_argument("ArchConfig: lamina input must match doubled retina output");
        if (medulla.in_ch != 2 * lamina.out_ch)
            throw std::invalid_argument(
                "ArchConfig: medulla input must match lamina output plus achromatic stream");
        if (lobula.in_ch != medulla.out_ch)
            throw std::invalid_argument("ArchConfig: lobula input must match medulla output");
        if (lobula.out_ch != 128)
            throw std::invalid_argument("ArchConfig: lobula must emit exactly 128 channels, got " +
                                        std::to_string(lobula.out_ch));
        if (kc_dim == 0) throw std::invalid_argument("ArchConfig: kc_dim must be positive");
        if (kc_fan_in == 0 || kc_fan_in > d_vpn())
            throw std::invalid_argument("ArchConfig: kc_fan_in out of range [1, " +
                                        std::to_string(d_vpn()) + "]");
        if (!(akwta_rho > 0.0 && akwta_rho < 1.0))
            throw std::invalid_argument("ArchConfig: akwta_rho must lie in (0,1)");
        if (!(akwta_alpha > 0.0 && akwta_alpha < 1.0))
            throw std::invalid_argument("ArchConfig: akwta_alpha must lie in (0,1)");
        if (lrn_size <= 0) throw std::invalid_argument("ArchConfig: lrn_size must be positive");
    }
};

/* conv -> leaky -> local response norm -> group norm, the fixed stage order. */
template <typename T>
struct ProcessingLayer {
    Param<T> kernel, bias, gamma, delta;
    ConvSpec spec{};
    int lrn_n = 5;
    T lrn_k = 1, lrn_alpha = T(1e-4), lrn_beta = T(0.75);
    T slope = T(0.01);
    std::size_t gn_groups = 8;
    T gn_eps = T(1e-5);

    ProcessingLayer() = default;

    ProcessingLayer(const std::string& name, const ConvSpec& cs, const ArchConfig& cfg, Rng& rng)
        : spec(cs),
          lrn_n(cfg.lrn_size),
          lrn_k(static_cast<T>(cfg.lrn_k)),
          lrn_alpha(static_cast<T>(cfg.lrn_alpha)),
          lrn_beta(static_cast<T>(cfg.lrn_beta)),
          slope(static_cast<T>(cfg.leaky_slope)),
          gn_groups(cfg.groups_for(cs.out_ch)),
          gn_eps(static_cast<T>(cfg.gn_eps)) {
        Tensor<T> k({cs.out_ch, cs.in_ch, cs.kernel, cs.kernel});
        const double bound = 1.0 / std::sqrt(static_cast<double>(cs.in_ch * cs.kernel * cs.kernel));
        for (std::size_t i = 0; i < k.size(); ++i)
            k[i] = static_cast<T>(rng.uniform(-bound, bound));
        Tensor<T> b({cs.out_ch});
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] = static_cast<T>(rng.uniform(-bound, bound));
        kernel = Param<T>(name + ".kernel", std::move(k));
        bias = Param<T>(name + ".bias", std::move(b));
        gamma = Param<T>(name + ".gamma", Tensor<T>::full({cs.out_ch}, T(1)));
        delta = Param<T>(name + ".delta", Tensor<T>({cs.out_ch}));
    }

    ad::Var<T> forward(const ad::Var<T>& x) const {
        auto c = ad::conv2d(x, kernel.var, bias.var, spec.stride, spec.padding);
        auto a = ad::leaky_relu(c, slope);
        auto l = ad::local_response_norm(a, lrn_n, lrn_k, lrn_alpha, lrn_beta);
        return ad::group_norm(l, gn_groups, gamma.var, delta.var, gn_eps);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&kernel);
        out.push_back(&bias);
        out.push_back(&gamma);
        out.push_back(&delta);
    }
};

/* Fixed binary connectivity: each output row draws exactly fan_in distinct
 * input positions, seeded and reproducible. */
template <typename T>
Tensor<T> build_mask(std::size_t d_in, std::size_t d_out, std::size_t fan_in,
                     std::uint64_t seed) {
    if (fan_in == 0 || fan_in > d_in)
        throw std::invalid_argument("build_mask: fan_in " + std::to_string(fan_in) +
                                    " outside [1, " + std::to_string(d_in) + "]");
    Tensor<T> mask({d_out, d_in});
    Rng rng(seed);
    std::vector<std::size_t> idx(d_in);
    for (std::size_t row = 0; row < d_out; ++row) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t j = 0; j < fan_in; ++j) {
            const std::size_t pick = j + rng.uniform_int(d_in - j);
            std::swap(idx[j], idx[pick]);
            mask[row * d_in + idx[j]] = T(1);
        }
    }
    return mask;
}

/* Indices of the k largest entries, ties broken toward the lower index so
 * selection is fully deterministic. */
template <typename T>
std::vector<std::size_t> topk_indices(const T* values, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, n);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (values[a] != values[b]) return values[a] > values[b];
                          return a < b;
                      });
    idx.resize(k);
    return idx;
}

/* Running activation-frequency tracker driving the adaptive thresholds. */
template <typename T>
struct AKWTAState {
    Tensor<T> mu;     // per-neuron running active fraction, in [0,1]
    Tensor<T> theta;  // last computed thresholds, >= 1
    T alpha = T(0.9);
    T rho = T(0.05);

    AKWTAState() = default;
    AKWTAState(std::size_t dim, T alpha_, T rho_)
        : mu({dim}), theta(Tensor<T>::full({dim}, T(1))), alpha(alpha_), rho(rho_) {}

    std::size_t k() const {
        const auto dim = static_cast<T>(mu.size());
        const auto k = static_cast<std::size_t>(std::floor(rho * dim));
        return std::max<std::size_t>(1, k);
    }
};

/* Adaptive k-winner-take-all over a [B x dim] batch of raw KC activations.
 * In training mode the running frequencies are updated first; thresholds
 * rescale activations for selection only, and winners keep their original
 * values. Returns a graph node so training can backprop through the gate. */
template <typename T>
ad::Var<T> akwta(const ad::Var<T>& kc_raw, AKWTAState<T>& state, bool training) {
    if (kc_raw->value.ndim() != 2 || kc_raw->value.dim(1) != state.mu.size())
        throw std::invalid_argument("akwta: expected [B x " + std::to_string(state.mu.size()) +
                                    "] input, got " + kc_raw->value.shape_str());
    const std::size_t B = kc_raw->value.dim(0), K = state.mu.size();
    const T* raw = kc_raw->value.data();

    if (training) {
        for (std::size_t i = 0; i < K; ++i) {
            std::size_t active = 0;
            for (std::size_t b = 0; b < B; ++b) active += raw[b * K + i] > T(0) ? 1 : 0;
            const T frac = static_cast<T>(active) / static_cast<T>(B);
            state.mu[i] = state.alpha * state.mu[i] + (T(1) - state.alpha) * frac;
        }
    }
    for (std::size_t i = 0; i < K; ++i) {
        const T over = std::max(T(0), state.mu[i] - state.rho);
        state.theta[i] = std::max(T(0), T(1) + T(2) * over);  // outer clamp is inert
    }

    const std::size_t k = state.k();
    Tensor<T> keep({B, K});
    std::vector<T> adj(K);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < K; ++i) adj[i] = raw[b * K + i] / state.theta[i];
        for (std::size_t i : topk_indices(adj.data(), K, k)) keep[b * K + i] = T(1);
    }
    return ad::apply_keep_mask(kc_raw, std::move(keep));
}

/* Sparse Kenyon-cell output of one image. */
template <typename T>
struct KCCode {
    Tensor<T> values;  // [dim], at most k nonzero
    std::size_t active_count = 0;

    static KCCode from_row(const T* row, std::size_t dim) {
        KCCode code;
        code.values = Tensor<T>({dim});
        for (std::size_t i = 0; i < dim; ++i) {
            code.values[i] = row[i];
            if (row[i] != T(0)) ++code.active_count;
        }
        return code;
    }
};

/* The rate-based pipeline: retina, lamina, medulla, lobula, VPN pooling,
 * masked sparse linear, adaptive k-WTA. */
template <typename T>
class VisionModelANN {
public:
    /* Optional per-tract hook applied before re-concatenation; identity when unset. */
    using TractTransform = std::function<ad::Var<T>(const ad::Var<T>&, std::size_t)>;

    VisionModelANN(const ArchConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
        cfg.validate();
        Rng prng(mix_seed(seed, 0x9a7a));  // parameter stream
        retina_ = ProcessingLayer<T>("retina", cfg.retina, cfg, prng);
        lamina_ = ProcessingLayer<T>("lamina", cfg.lamina, cfg, prng);
        medulla_ = ProcessingLayer<T>("medulla", cfg.medulla, cfg, prng);
        lobula_ = ProcessingLayer<T>("lobula", cfg.lobula, cfg, prng);

        const std::size_t d = cfg.d_vpn();
        mask_ = std::make_shared<const Tensor<T>>(
            build_mask<T>(d, cfg.kc_dim, cfg.kc_fan_in, mix_seed(seed, 0x6d61)));
        Tensor<T> w({cfg.kc_dim, d});
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.kc_fan_in));
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = static_cast<T>(prng.uniform(-bound, bound)) * (*mask_)[i];
        kc_weight_ = Param<T>("kc.weight", std::move(w));
        if (cfg.kc_bias) kc_bias_ = Param<T>("kc.bias", Tensor<T>({cfg.kc_dim}));
        akwta_ = AKWTAState<T>(cfg.kc_dim, static_cast<T>(cfg.akwta_alpha),
                               static_cast<T>(cfg.akwta_rho));
    }

    ad::Var<T> retina_forward(const ad::Var<T>& img) const {
        if (img->value.ndim() != 4 || img->value.dim(1) != 2)
            throw std::invalid_argument("retina_forward: expected [B x 2 x H x W] input, got " +
                                        img->value.shape_str());
        auto y = retina_.forward(img);
        return ad::concat_channels<T>({y, ad::negate(y)});
    }

    ad::Var<T> lamina_forward(const ad::Var<T>& x) const { return lamina_.forward(x); }

    ad::Var<T> medulla_forward(const ad::Var<T>& x) const {
        const std::size_t C = x->value.dim(1);
        auto achroma = ad::repeat_channel(ad::avg_pool_channels(x), C);
        return medulla_.forward(ad::concat_channels<T>({x, achroma}));
    }

    ad::Var<T> lobula_forward(const ad::Var<T>& x) const { return lobula_.forward(x); }

    /* Split 128 channels into the 43/43/42 tracts, re-concatenate (identity
     * unless a per-tract transform is installed), pool channels, flatten. */
    ad::Var<T> vpn_split_concat(const ad::Var<T>& x) const {
        if (x->value.ndim() != 4 || x->value.dim(1) != 128)
            throw std::invalid_argument("vpn_split_concat: expected 128 channels, got " +
                                        x->value.shape_str());
        static constexpr std::size_t tract_sizes[3] = {43, 43, 42};
        std::vector<ad::Var<T>> tracts;
        std::size_t c0 = 0;
        for (std::size_t t = 0; t < 3; ++t) {
            auto slice = ad::slice_channels(x, c0, tract_sizes[t]);
            if (tract_transform) slice = tract_transform(slice, t);
            tracts.push_back(slice);
            c0 += tract_sizes[t];
        }
        auto merged = ad::concat_channels<T>(tracts);
        auto pooled = ad::avg_pool_channels(merged);
        const auto& s = pooled->value.shape();
        return ad::reshape(pooled, {s[0], s[2] * s[3]});
    }

    ad::Var<T> sparse_linear(const ad::Var<T>& vpn) const {
        return ad::masked_linear(vpn, kc_weight_.var, mask_,
                                 cfg_.kc_bias ? kc_bias_.var : ad::Var<T>{});
    }

    /* Differentiable pass up to raw KC activations (before the k-WTA gate). */
    ad::Var<T> forward_raw(const ad::Var<T>& img) const {
        auto x = retina_forward(img);
        x = lamina_forward(x);
        x = medulla_forward(x);
        x = lobula_forward(x);
        x = vpn_split_concat(x);
        return sparse_linear(x);
    }

    ad::Var<T> forward(const ad::Var<T>& img, bool training) {
        return akwta(forward_raw(img), akwta_, training);
    }

    /* Evaluation-mode encoding: no graph, frozen running frequencies. */
    std::vector<KCCode<T>> encode(const Tensor<T>& imgs) {
        ad::NoGradGuard ng;
        auto out = forward(ad::constant(imgs), false);
        const std::size_t B = out->value.dim(0), K = out->value.dim(1);
        std::vector<KCCode<T>> codes;
        codes.reserve(B);
        for (std::size_t b = 0; b < B; ++b)
            codes.push_back(KCCode<T>::from_row(out->value.data() + b * K, K));
        return codes;
    }

    std::vector<Param<T>*> parameters() {
        std::vector<Param<T>*> out;
        retina_.collect(out);
        lamina_.collect(out);
        medulla_.collect(out);
        lobula_.collect(out);
        out.push_back(&kc_weight_);
        if (cfg_.kc_bias) out.push_back(&kc_bias_);
        return out;
    }

    /* Every tensor a checkpoint must carry, model state included. */
    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (Param<T>* p : parameters()) out.emplace_back(p->name, &p->value());
        out.emplace_back("kc.mask", const_cast<Tensor<T>*>(mask_.get()));
        out.emplace_back("akwta.mu", &akwta_.mu);
        return out;
    }

    const Tensor<T>& mask() const { return *mask_; }
    std::shared_ptr<const Tensor<T>> mask_ptr() const { return mask_; }
    AKWTAState<T>& akwta_state() { return akwta_; }
    const ArchConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ProcessingLayer<T>& retina_layer() { return retina_; }
    ProcessingLayer<T>& lamina_layer() { return lamina_; }
    ProcessingLayer<T>& medulla_layer() { return medulla_; }
    ProcessingLayer<T>& lobula_layer() { return lobula_; }
    Param<T>& kc_weight() { return kc_weight_; }
    Param<T>& kc_bias() { return kc_bias_; }

    TractTransform tract_transform;

private:
    ArchConfig cfg_;
    std::uint64_t seed_ = 0;
    ProcessingLayer<T> retina_, lamina_, medulla_, lobula_;
    Param<T> kc_weight_, kc_bias_;
    std::shared_ptr<const Tensor<T>> mask_;
    AKWTAState<T> akwta_;
};

}  // namespace apiavis
