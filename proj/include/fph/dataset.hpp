#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "fph/tensor.hpp"

namespace fph {

/// Decoded images (3 x S x S, values in [0, 1]) with one class label each.
struct LabeledImages {
    std::vector<Tensor> images;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return images.size(); }
    std::size_t class_count() const { return std::set<std::uint32_t>(labels.begin(), labels.end()).size(); }
};

} // namespace fph
