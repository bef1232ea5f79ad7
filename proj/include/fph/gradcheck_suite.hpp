#pragma once

// Finite-difference verification of every differentiable op and of the full
// training objective. Each case draws random inputs from a per-seed RNG and
// resamples until no relu or hinge input lies within `kink_margin` of zero.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fph/errors.hpp"
#include "fph/model.hpp"
#include "fph/tensor.hpp"
#include "fph/training.hpp"

namespace fph {

struct GradCheckOptions {
    double eps = 1e-5;
    double tolerance = 1e-6;
    std::size_t seeds = 10;
    double kink_margin = 1e-3;
    std::uint64_t base_seed = 7001;
    std::size_t max_attempts = 2000;
};

struct GradCheckResult {
    std::string op;
    double max_error = 0.0;
    double tolerance = 0.0;
    std::size_t seeds = 0;
    std::size_t rejected = 0; // samples discarded for lying near a kink

    bool passed() const { return seeds > 0 && max_error <= tolerance; }
};

namespace detail {

// A sampled instance: the leaves to differentiate and a scalar objective that
// reads them.
struct GradSample {
    std::vector<Tensor> inputs;
    std::function<Tensor()> objective;
};

using SampleFn = std::function<GradSample(std::mt19937_64&)>;

inline Tensor random_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = u(rng);
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Scalar <r, y> with fixed random r, so every output coordinate carries a
// distinct upstream gradient.
inline Tensor random_projection(const Tensor& y, const Tensor& r) {
    return affine(flatten(y), r, Tensor::zeros({1}));
}

inline GradSample projected(std::vector<Tensor> inputs, std::function<Tensor()> op, std::size_t out_size,
                            std::mt19937_64& rng) {
    auto r = random_tensor({1, out_size}, -1.0, 1.0, rng, false);
    return {std::move(inputs), [op = std::move(op), r] { return random_projection(op(), r); }};
}

inline PyramidActivations codes_only(Tensor v, Tensor v_c) {
    PyramidActivations a;
    a.v = std::move(v);
    a.v_c = std::move(v_c);
    return a;
}

// Tiny network used for the end-to-end case: input 32, two channels per stage.
inline std::vector<StageSpec> tiny_stage_spec() {
    return {{2, 1, true}, {2, 1, true}, {2, 1, true}, {2, 1, true}, {2, 1, true}};
}

inline const std::vector<std::pair<std::string, SampleFn>>& gradcheck_cases() {
    static const std::vector<std::pair<std::string, SampleFn>> cases = {
        {"affine",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({5}, -1, 1, rng);
             auto W = random_tensor({4, 5}, -1, 1, rng);
             auto b = random_tensor({4}, -1, 1, rng);
             return projected({x, W, b}, [=] { return affine(x, W, b); }, 4, rng);
         }},
        {"conv2d",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({2, 6, 6}, -1, 1, rng);
             auto k = random_tensor({3, 2, 3, 3}, -1, 1, rng);
             // stride 2 with padding 1 exercises both the border and the subsampling paths
             return projected({x, k}, [=] { return conv2d(x, k, 2, 1); }, 3 * 3 * 3, rng);
         }},
        {"avgpool2d",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({2, 4, 6}, -1, 1, rng);
             return projected({x}, [=] { return avgpool2d(x, 2, 3); }, 2 * 2 * 3, rng);
         }},
        {"avgpool1d_pairs",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({8}, -1, 1, rng);
             return projected({x}, [=] { return avgpool1d_pairs(x); }, 4, rng);
         }},
        {"sigmoid",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({6}, -4, 4, rng);
             return projected({x}, [=] { return sigmoid(x); }, 6, rng);
         }},
        {"relu",
         [](std::mt19937_64& rng) {
             auto x = random_tensor({6}, -1, 1, rng);
             return projected({x}, [=] { return relu(x); }, 6, rng);
         }},
        {"add",
         [](std::mt19937_64& rng) {
             auto a = random_tensor({2, 3}, -1, 1, rng);
             auto b = random_tensor({2, 3}, -1, 1, rng);
             return projected({a, b}, [=] { return add(a, b); }, 6, rng);
         }},
        {"triplet_loss",
         [](std::mt19937_64& rng) {
             auto vi = random_tensor({8}, 0, 1, rng);
             auto vj = random_tensor({8}, 0, 1, rng);
             auto vk = random_tensor({8}, 0, 1, rng);
             return GradSample{{vi, vj, vk}, [=] { return triplet_loss(vi, vj, vk, 1.0); }};
         }},
        {"combined_loss",
         [](std::mt19937_64& rng) {
             std::vector<Tensor> leaves;
             std::vector<PyramidActivations> acts;
             for (int i = 0; i < 4; ++i) {
                 auto v = random_tensor({8}, 0, 1, rng);
                 auto vc = random_tensor({8}, 0, 1, rng);
                 leaves.push_back(v);
                 leaves.push_back(vc);
                 acts.push_back(codes_only(v, vc));
             }
             const std::vector<Triplet> triplets = {{0, 1, 2}, {1, 0, 3}, {2, 3, 0}};
             return GradSample{leaves, [=] { return combined_loss(acts, triplets, 1.0).total; }};
         }},
        {"end_to_end",
         [](std::mt19937_64& rng) {
             auto net = std::make_shared<HashingNetwork>(tiny_stage_spec(), 32, HashConfig{8}, rng());
             std::vector<Tensor> images;
             for (int i = 0; i < 3; ++i) images.push_back(random_tensor({3, 32, 32}, 0, 1, rng, i == 0));
             std::vector<Tensor> leaves{images[0]};
             for (auto& p : net->parameters()) leaves.push_back(p.tensor);
             const std::vector<Triplet> triplets = {{0, 1, 2}, {1, 0, 2}};
             const double margin = 2.0;
             return GradSample{leaves, [net, images, triplets, margin] {
                                   std::vector<PyramidActivations> acts;
                                   for (const auto& img : images) acts.push_back(net->forward(img));
                                   return combined_loss(acts, triplets, margin).total;
                               }};
         }},
    };
    return cases;
}

} // namespace detail

/// Names accepted by run_gradcheck, in suite order.
inline std::vector<std::string> gradcheck_ops() {
    std::vector<std::string> names;
    for (const auto& [name, fn] : detail::gradcheck_cases()) names.push_back(name);
    return names;
}

inline GradCheckResult run_gradcheck(std::string_view op, const GradCheckOptions& opts = {}) {
    const auto& cases = detail::gradcheck_cases();
    auto it = std::find_if(cases.begin(), cases.end(), [&](const auto& c) { return c.first == op; });
    if (it == cases.end()) throw ConfigError("unknown gradcheck op '" + std::string(op) + "'");

    GradCheckResult result;
    result.op = it->first;
    result.tolerance = opts.tolerance;
    for (std::size_t s = 0; s < opts.seeds; ++s) {
        std::mt19937_64 rng(opts.base_seed + 1000003 * s);
        detail::GradSample sample;
        for (std::size_t attempt = 0;; ++attempt) {
            if (attempt == opts.max_attempts) {
                throw NumericError("gradcheck " + result.op + ": no kink-free sample after " +
                                   std::to_string(attempt) + " attempts");
            }
            sample = it->second(rng);
            KinkScope kinks;
            sample.objective();
            if (kinks.min_distance() >= opts.kink_margin) break;
            ++result.rejected;
        }
        auto f = [&](const Tensor&) { return sample.objective(); };
        for (auto& x : sample.inputs) result.max_error = std::max(result.max_error, grad_check(f, x, opts.eps));
        ++result.seeds;
    }
    return result;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::span<const std::string> ops,
                                                        const GradCheckOptions& opts = {}) {
    std::vector<GradCheckResult> out;
    for (const auto& op : ops) out.push_back(run_gradcheck(op, opts));
    return out;
}

} // namespace fph
