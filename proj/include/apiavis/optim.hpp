#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apiavis/autodiff.hpp"
#include "apiavis/tensor.hpp"

namespace apiavis {

/* A named learnable tensor. The wrapped autodiff leaf is what forward passes
 * consume; grad is pre-allocated so a parameter that never appears in a graph
 * still reports an all-zero gradient. */
template <typename T>
struct Param {
    std::string name;
    ad::Var<T> var;

    Param() = default;
    Param(std::string n, Tensor<T> v, bool trainable = true) : name(std::move(n)) {
        var = std::make_shared<ad::Node<T>>();
        var->value = std::move(v);
        var->requires_grad = trainable;
        ad::ensure_grad(*var);
    }

    Tensor<T>& value() { return var->value; }
    const Tensor<T>& value() const { return var->value; }
    Tensor<T>& grad() { return var->grad; }
    const Tensor<T>& grad() const { return var->grad; }
    bool trainable() const { return var->requires_grad; }

    void zero_grad() {
        ad::ensure_grad(*var);
        var->grad.fill(T(0));
    }
};

template <typename T>
struct AdamWConfig {
    T lr = T(1e-4);
    T weight_decay = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

/* AdamW with decoupled weight decay: the decay shrinks the value directly
 * (never folded into the gradient), then the bias-corrected moment update
 * is applied. */
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Param<T>*> params, AdamWConfig<T> cfg = {}) : cfg_(cfg) {
        if (cfg.lr <= T(0)) throw std::invalid_argument("AdamW: lr must be positive");
        if (cfg.weight_decay < T(0))
            throw std::invalid_argument("AdamW: weight_decay must be non-negative");
        for (Param<T>* p : params) {
            if (!p->trainable()) continue;
            vars_.push_back(p->var);
            m_.emplace_back(p->value().shape());
            v_.emplace_back(p->value().shape());
        }
    }

    T lr() const { return cfg_.lr; }
    void set_lr(T lr) {
        if (lr <= T(0)) throw std::invalid_argument("AdamW: lr must be positive");
        cfg_.lr = lr;
    }
    std::uint64_t step_count() const { return t_; }

    void zero_grad() {
        for (auto& var : vars_) {
            ad::ensure_grad(*var);
            var->grad.fill(T(0));
        }
    }

    void step() {
        if (vars_.empty()) {
            std::fprintf(stderr, "AdamW: step() with no trainable parameters is a no-op\n");
            return;
        }
        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        const T decay = T(1) - cfg_.lr * cfg_.weight_decay;
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            auto& node = *vars_[i];
            ad::ensure_grad(node);
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (std::size_t j = 0; j < node.value.size(); ++j) {
                const T g = node.grad[j];
                node.value[j] *= decay;
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g * g;
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                node.value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamWConfig<T> cfg_;
    std::vector<ad::Var<T>> vars_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t t_ = 0;
};

/* Cosine annealing, stepped once at the end of each epoch:
 * lr(e) = 0.5 * base * (1 + cos(pi * e / total)). */
template <typename T>
class CosineSchedule {
public:
    CosineSchedule(T base_lr, std::size_t total_epochs)
        : base_lr_(base_lr), total_epochs_(total_epochs) {
        if (base_lr <= T(0)) throw std::invalid_argument("CosineSchedule: base_lr must be positive");
        if (total_epochs == 0)
            throw std::invalid_argument("CosineSchedule: total_epochs must be positive");
    }

    T lr() const {
        const T x = static_cast<T>(current_epoch_) / static_cast<T>(total_epochs_);
        return T(0.5) * base_lr_ * (T(1) + std::cos(T(3.14159265358979323846) * x));
    }

    void step() { ++current_epoch_; }
    std::size_t current_epoch() const { return current_epoch_; }
    T base_lr() const { return base_lr_; }

private:
    T base_lr_;
    std::size_t total_epochs_;
    std::size_t current_epoch_ = 0;
};

}  // namespace apiavis
