#pragma once

#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "fph/errors.hpp"
#include "fph/tensor.hpp"

namespace fph {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered list of named trainable tensors. Order is part of the checkpoint
/// layout and of the optimizer's update order.
using ParameterList = std::vector<NamedTensor>;

inline void require_unique_names(const ParameterList& params) {
    std::unordered_set<std::string> seen;
    for (const auto& p : params) {
        if (!seen.insert(p.name).second) throw FormatError("duplicate parameter name '" + p.name + "'");
    }
}

inline void zero_grads(ParameterList& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

/// Copies values from `source` into `target`, matching by name and shape.
inline void assign_parameters(ParameterList& target, const ParameterList& source) {
    if (target.size() != source.size()) {
        throw ConfigError("parameter count mismatch: model has " + std::to_string(target.size()) +
                          ", source has " + std::to_string(source.size()));
    }
    for (auto& t : target) {
        const NamedTensor* match = nullptr;
        for (const auto& s : source) {
            if (s.name == t.name) {
                match = &s;
                break;
            }
        }
        if (!match) throw ConfigError("parameter '" + t.name + "' missing from source");
        if (match->tensor.shape() != t.tensor.shape()) {
            throw ConfigError("parameter '" + t.name + "' has shape " + shape_string(match->tensor.shape()) +
                              ", expected " + shape_string(t.tensor.shape()));
        }
        auto dst = t.tensor.mutable_data();
        auto src = match->tensor.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

/// Uniform in +-sqrt(6 / fan_in).
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(data), true);
}

} // namespace fph
