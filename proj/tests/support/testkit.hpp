#pragma once

/* Shared helpers for the test suites: random tensor generation and the
 * finite-difference gradient checker used to validate every op's backward
 * pass against central differences on 64-bit tensors. */

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apiavis/autodiff.hpp"
#include "apiavis/nn_ops.hpp"
#include "apiavis/rng.hpp"
#include "apiavis/tensor.hpp"

namespace testkit {

using apiavis::Rng;
using apiavis::Tensor;

inline Tensor<double> rand_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                                  double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/* Uniform in [-hi,-margin] U [margin,hi]; keeps FD probes away from kinks. */
inline Tensor<double> rand_tensor_off_zero(Rng& rng, std::vector<std::size_t> shape,
                                           double margin = 0.05, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(margin, hi);
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

inline Tensor<double> rand_binary(Rng& rng, std::vector<std::size_t> shape, double p_one = 0.5) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.bernoulli(p_one) ? 1.0 : 0.0;
    return t;
}

/* Scalar loss builder over leaves made from `inputs`, in matching order. */
using LossBuilder =
    std::function<apiavis::ad::Var<double>(const std::vector<apiavis::ad::Var<double>>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
    apiavis::ad::NoGradGuard ng;
    std::vector<apiavis::ad::Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(apiavis::ad::leaf(t));
    return build(leaves)->value[0];
}

/* Max hybrid relative error |fd - analytic| / max(1, |fd|, |analytic|) over
 * every coordinate of every input (subsampled past max_coords per input). */
inline double fd_max_err(const LossBuilder& build, std::vector<Tensor<double>> inputs,
                         Rng& rng, double h = 1e-5, std::size_t max_coords = 160) {
    std::vector<apiavis::ad::Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(apiavis::ad::leaf(t));
    auto loss = build(leaves);
    apiavis::ad::backward(loss);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<std::size_t> coords;
        const std::size_t n = inputs[i].size();
        if (n <= max_coords) {
            coords.resize(n);
            for (std::size_t j = 0; j < n; ++j) coords[j] = j;
        } else {
            for (std::size_t j = 0; j < max_coords; ++j) coords.push_back(rng.uniform_int(n));
        }
        for (std::size_t j : coords) {
            const double orig = inputs[i][j];
            inputs[i][j] = orig + h;
            const double lp = eval_loss(build, inputs);
            inputs[i][j] = orig - h;
            const double lm = eval_loss(build, inputs);
            inputs[i][j] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an =
                leaves[i]->grad.size() == inputs[i].size() ? leaves[i]->grad[j] : 0.0;
            const double err =
                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/* Standard loss head: sum(op_output * fixed_random_weights). Random upstream
 * weights catch index-permutation bugs that a plain sum() would mask. */
inline apiavis::ad::Var<double> weighted_sum(const apiavis::ad::Var<double>& v,
                                             const Tensor<double>& w) {
    return apiavis::ad::sum(apiavis::ad::mul(v, apiavis::ad::constant(w)));
}

struct FdCase {
    std::string op;
    double max_err = 0.0;
    std::size_t instances = 0;
};

/* Run the whole-library gradient check, `instances` random cases per op.
 * Returns per-op worst errors; the caller asserts against the tolerance. */
inline std::vector<FdCase> run_fd_suite(std::size_t instances, std::uint64_t seed) {
    using namespace apiavis::ad;
    std::vector<FdCase> results;
    Rng rng(seed);

    auto record = [&](const std::string& op,
                      const std::function<double(Rng&)>& one_instance) {
        FdCase c{op, 0.0, instances};
        for (std::size_t k = 0; k < instances; ++k)
            c.max_err = std::max(c.max_err, one_instance(rng));
        results.push_back(c);
    };

    record("add", [](Rng& r) {
        auto a = rand_tensor(r, {3, 4}), b = rand_tensor(r, {3, 4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err([&](const auto& L) { return weighted_sum(add(L[0], L[1]), w); },
                          {a, b}, r);
    });
    record("sub", [](Rng& r) {
        auto a = rand_tensor(r, {3, 4}), b = rand_tensor(r, {3, 4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err([&](const auto& L) { return weighted_sum(sub(L[0], L[1]), w); },
                          {a, b}, r);
    });
    record("mul", [](Rng& r) {
        auto a = rand_tensor(r, {3, 4}), b = rand_tensor(r, {3, 4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err([&](const auto& L) { return weighted_sum(mul(L[0], L[1]), w); },
                          {a, b}, r);
    });
    record("affine", [](Rng& r) {
        auto a = rand_tensor(r, {2, 5});
        auto w = rand_tensor(r, {2, 5});
        const double s = r.uniform(-2, 2), c = r.uniform(-1, 1);
        return fd_max_err([&](const auto& L) { return weighted_sum(affine(L[0], s, c), w); },
                          {a}, r);
    });
    record("sum", [](Rng& r) {
        auto a = rand_tensor(r, {2, 3, 2});
        return fd_max_err([&](const auto& L) { return sum(L[0]); }, {a}, r);
    });
    record("mean", [](Rng& r) {
        auto a = rand_tensor(r, {2, 3, 2});
        return fd_max_err([&](const auto& L) { return mean(L[0]); }, {a}, r);
    });
    record("reshape", [](Rng& r) {
        auto a = rand_tensor(r, {2, 6});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(reshape(L[0], {3, 4}), w); }, {a}, r);
    });
    record("matmul", [](Rng& r) {
        auto a = rand_tensor(r, {3, 4}), b = rand_tensor(r, {4, 2});
        auto w = rand_tensor(r, {3, 2});
        return fd_max_err([&](const auto& L) { return weighted_sum(matmul(L[0], L[1]), w); },
                          {a, b}, r);
    });
    record("transpose2d", [](Rng& r) {
        auto a = rand_tensor(r, {3, 5});
        auto w = rand_tensor(r, {5, 3});
        return fd_max_err([&](const auto& L) { return weighted_sum(transpose2d(L[0]), w); },
                          {a}, r);
    });
    record("concat_rows", [](Rng& r) {
        auto a = rand_tensor(r, {2, 3}), b = rand_tensor(r, {4, 3});
        auto w = rand_tensor(r, {6, 3});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(concat_rows(L[0], L[1]), w); }, {a, b}, r);
    });
    record("concat_channels", [](Rng& r) {
        auto a = rand_tensor(r, {2, 1, 3, 2}), b = rand_tensor(r, {2, 2, 3, 2}),
             c = rand_tensor(r, {2, 3, 3, 2});
        auto w = rand_tensor(r, {2, 6, 3, 2});
        return fd_max_err(
            [&](const auto& L) {
                return weighted_sum(concat_channels<double>({L[0], L[1], L[2]}), w);
            },
            {a, b, c}, r);
    });
    record("slice_channels", [](Rng& r) {
        auto a = rand_tensor(r, {2, 5, 3, 2});
        auto w = rand_tensor(r, {2, 3, 3, 2});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(slice_channels(L[0], 1, 3), w); }, {a}, r);
    });
    record("sub_rowvec", [](Rng& r) {
        auto x = rand_tensor(r, {3, 4}), v = rand_tensor(r, {4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(sub_rowvec(L[0], L[1]), w); }, {x, v}, r);
    });
    record("mul_rowvec", [](Rng& r) {
        auto x = rand_tensor(r, {3, 4}), v = rand_tensor(r, {4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(mul_rowvec(L[0], L[1]), w); }, {x, v}, r);
    });
    record("clamp_min", [](Rng& r) {
        auto x = rand_tensor_off_zero(r, {3, 4});
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(clamp_min(L[0], 0.0), w); }, {x}, r);
    });
    record("conv2d", [](Rng& r) {
        const std::size_t stride = 1 + r.uniform_int(2), padding = r.uniform_int(2);
        auto x = rand_tensor(r, {2, 2, 5, 5});
        auto k = rand_tensor(r, {3, 2, 3, 3});
        auto b = rand_tensor(r, {3});
        const std::size_t ho = (5 + 2 * padding - 3) / stride + 1;
        auto w = rand_tensor(r, {2, 3, ho, ho});
        return fd_max_err(
            [&](const auto& L) {
                return weighted_sum(conv2d(L[0], L[1], L[2], stride, padding), w);
            },
            {x, k, b}, r);
    });
    record("conv2d_nobias", [](Rng& r) {
        auto x = rand_tensor(r, {1, 3, 4, 4});
        auto k = rand_tensor(r, {2, 3, 3, 3});
        auto w = rand_tensor(r, {1, 2, 4, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(conv2d(L[0], L[1], 1, 1), w); }, {x, k}, r);
    });
    record("leaky_relu", [](Rng& r) {
        auto x = rand_tensor_off_zero(r, {3, 5});
        auto w = rand_tensor(r, {3, 5});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(leaky_relu(L[0], 0.01), w); }, {x}, r);
    });
    record("local_response_norm", [](Rng& r) {
        const int n = 1 + static_cast<int>(r.uniform_int(5));
        const double beta = r.bernoulli(0.5) ? 0.75 : 0.6;
        auto x = rand_tensor(r, {2, 4, 3, 3});
        auto w = rand_tensor(r, {2, 4, 3, 3});
        return fd_max_err(
            [&](const auto& L) {
                return weighted_sum(local_response_norm(L[0], n, 1.0, 0.5, beta), w);
            },
            {x}, r);
    });
    record("group_norm", [](Rng& r) {
        const std::size_t groups = std::vector<std::size_t>{1, 2, 3}[r.uniform_int(3)];
        auto x = rand_tensor(r, {2, 6, 3, 2});
        auto ga = rand_tensor(r, {6}), de = rand_tensor(r, {6});
        auto w = rand_tensor(r, {2, 6, 3, 2});
        return fd_max_err(
            [&](const auto& L) {
                return weighted_sum(group_norm(L[0], groups, L[1], L[2], 1e-5), w);
            },
            {x, ga, de}, r);
    });
    record("avg_pool_channels", [](Rng& r) {
        auto x = rand_tensor(r, {2, 5, 3, 3});
        auto w = rand_tensor(r, {2, 1, 3, 3});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(avg_pool_channels(L[0]), w); }, {x}, r);
    });
    record("repeat_channel", [](Rng& r) {
        auto x = rand_tensor(r, {2, 1, 3, 3});
        auto w = rand_tensor(r, {2, 4, 3, 3});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(repeat_channel(L[0], 4), w); }, {x}, r);
    });
    record("masked_linear", [](Rng& r) {
        auto x = rand_tensor(r, {3, 5});
        auto wt = rand_tensor(r, {7, 5});
        auto b = rand_tensor(r, {7});
        auto mask = std::make_shared<const Tensor<double>>(rand_binary(r, {7, 5}));
        auto w = rand_tensor(r, {3, 7});
        return fd_max_err(
            [&](const auto& L) {
                return weighted_sum(masked_linear(L[0], L[1], mask, L[2]), w);
            },
            {x, wt, b}, r);
    });
    record("row_l2_normalize", [](Rng& r) {
        auto x = rand_tensor_off_zero(r, {3, 4}, 0.3);
        auto w = rand_tensor(r, {3, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(row_l2_normalize(L[0]), w); }, {x}, r);
    });
    record("mask_diagonal", [](Rng& r) {
        auto x = rand_tensor(r, {4, 4});
        auto w = rand_tensor(r, {4, 4});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(mask_diagonal(L[0], -3.0), w); }, {x}, r);
    });
    record("cross_entropy_rows", [](Rng& r) {
        auto x = rand_tensor(r, {4, 5}, -2.0, 2.0);
        std::vector<std::size_t> targets(4);
        for (auto& t : targets) t = r.uniform_int(5);
        return fd_max_err(
            [&](const auto& L) { return cross_entropy_rows(L[0], targets); }, {x}, r);
    });
    record("apply_keep_mask", [](Rng& r) {
        auto x = rand_tensor(r, {3, 6});
        auto keep = rand_binary(r, {3, 6});
        auto w = rand_tensor(r, {3, 6});
        return fd_max_err(
            [&](const auto& L) { return weighted_sum(apply_keep_mask(L[0], keep), w); }, {x}, r);
    });

    return results;
}

}  // namespace testkit
