#pragma once

// Staged convolutional feature extractor. Each stage is a stack of
// conv3x3 + relu blocks; a downsampling stage uses stride 2 in its first
// block. Stages 2, 3 and 4 are exposed as side outputs.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fph/errors.hpp"
#include "fph/parameters.hpp"
#include "fph/tensor.hpp"

namespace fph {

struct StageSpec {
    std::size_t out_channels = 1;
    std::size_t blocks = 1;
    bool downsample = true;
};

inline constexpr std::size_t kStageCount = 5;
inline constexpr std::size_t kKernelSize = 3;

/// Channels (8, 16, 32, 64, 128), one block per stage, every stage halves the side.
inline std::vector<StageSpec> desk_stage_spec() {
    return {{8, 1, true}, {16, 1, true}, {32, 1, true}, {64, 1, true}, {128, 1, true}};
}

/// ResNet18-shaped stage layout: channels (64, 64, 128, 256, 512), two blocks
/// in stages 1-4. Stage 1's max-pool stem is replaced by a strided conv.
inline std::vector<StageSpec> paper_stage_spec() {
    return {{64, 1, true}, {64, 2, true}, {128, 2, true}, {256, 2, true}, {512, 2, true}};
}

struct FeatureMaps {
    Tensor m_s2;
    Tensor m_s3;
    Tensor m_s4;
};

class Backbone {
public:
    Backbone(std::vector<StageSpec> stages, std::size_t input_size, std::uint64_t seed)
        : stages_(std::move(stages)), input_size_(input_size) {
        if (stages_.size() != kStageCount) {
            throw ConfigError("backbone needs exactly 5 stages, got " + std::to_string(stages_.size()));
        }
        if (input_size_ == 0 || input_size_ % 32 != 0) {
            throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size_));
        }
        std::size_t side = input_size_;
        std::size_t in_channels = 3;
        std::mt19937_64 rng(seed);
        for (std::size_t s = 0; s < kStageCount; ++s) {
            const auto& spec = stages_[s];
            if (spec.out_channels < 1 || spec.blocks < 1) {
                throw ConfigError("stage " + std::to_string(s) + " needs out_channels >= 1 and blocks >= 1");
            }
            if (spec.downsample) {
                if (side % 2 != 0) throw ConfigError("stage " + std::to_string(s) + " cannot halve odd side");
                side /= 2;
            }
            std::vector<Tensor> convs;
            for (std::size_t b = 0; b < spec.blocks; ++b) {
                const std::size_t fan_in = in_channels * kKernelSize * kKernelSize;
                convs.push_back(
                    fan_in_uniform({spec.out_channels, in_channels, kKernelSize, kKernelSize}, fan_in, rng));
                in_channels = spec.out_channels;
            }
            kernels_.push_back(std::move(convs));
            sides_.push_back(side);
        }
    }

    std::size_t input_size() const { return input_size_; }
    const std::vector<StageSpec>& stages() const { return stages_; }
    std::size_t channels(std::size_t stage) const { return stages_.at(stage).out_channels; }
    /// Spatial side of the feature map emitted by `stage`.
    std::size_t side(std::size_t stage) const { return sides_.at(stage); }

    ParameterList parameters() const {
        ParameterList out;
        for (std::size_t s = 0; s < kernels_.size(); ++s) {
            for (std::size_t b = 0; b < kernels_[s].size(); ++b) {
                out.push_back({"backbone.stage" + std::to_string(s) + ".conv" + std::to_string(b) + ".weight",
                               kernels_[s][b]});
            }
        }
        return out;
    }

    FeatureMaps forward(const Tensor& image) const {
        if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != input_size_ || image.dim(2) != input_size_) {
            throw DimensionError("backbone expects a 3x" + std::to_string(input_size_) + "x" +
                                 std::to_string(input_size_) + " image, got " + shape_string(image.shape()));
        }
        FeatureMaps maps;
        Tensor h = image;
        for (std::size_t s = 0; s < kStageCount; ++s) {
            for (std::size_t b = 0; b < kernels_[s].size(); ++b) {
                const std::size_t stride = (b == 0 && stages_[s].downsample) ? 2 : 1;
                h = relu(conv2d(h, kernels_[s][b], stride, 1));
            }
            if (s == 2) maps.m_s2 = h;
            if (s == 3) maps.m_s3 = h;
        }
        maps.m_s4 = h;
        return maps;
    }

private:
    std::vector<StageSpec> stages_;
    std::size_t input_size_;
    std::vector<std::vector<Tensor>> kernels_;
    std::vector<std::size_t> sides_;
};

inline Backbone build_backbone(std::vector<StageSpec> spec, std::size_t input_size, std::uint64_t seed) {
    return Backbone(std::move(spec), input_size, seed);
}

} // namespace fph
