#pragma once

#include <cstdint>

#include "fph/backbone.hpp"
#include "fph/parameters.hpp"
#include "fph/pyramid.hpp"

namespace fph {

/// Which real-valued code feeds the binary embedding.
enum class CodeSource { consensus, vertical };

/// Backbone plus the hashing heads of both pyramids.
class HashingNetwork {
public:
    HashingNetwork(std::vector<StageSpec> stages, std::size_t input_size, HashConfig cfg, std::uint64_t seed)
        : backbone_(std::move(stages), input_size, seed),
          heads_(build_heads(cfg, backbone_.channels(2), backbone_.channels(3), backbone_.channels(4),
                             seed ^ 0x9e3779b97f4a7c15ull)),
          cfg_(cfg) {
        for (std::size_t t = 2; t <= 4; ++t) {
            if (backbone_.side(t) % lateral_pool_side(t) != 0) {
                throw ConfigError("stage " + std::to_string(t) + " side " + std::to_string(backbone_.side(t)) +
                                  " is not divisible by its pooling target " +
                                  std::to_string(lateral_pool_side(t)));
            }
        }
    }

    const Backbone& backbone() const { return backbone_; }
    const PyramidHeads& heads() const { return heads_; }
    std::size_t q() const { return cfg_.q; }
    std::size_t input_size() const { return backbone_.input_size(); }

    ParameterList parameters() const {
        auto params = backbone_.parameters();
        for (auto& p : heads_.parameters()) params.push_back(std::move(p));
        return params;
    }

    PyramidActivations forward(const Tensor& image) const {
        return pyramid_forward(backbone_.forward(image), heads_);
    }

    BinaryCode encode(const Tensor& image, CodeSource source = CodeSource::consensus) const {
        auto act = forward(image);
        return binarize(source == CodeSource::consensus ? act.v_c : act.v);
    }

private:
    Backbone backbone_;
    PyramidHeads heads_;
    HashConfig cfg_;
};

} // namespace fph
