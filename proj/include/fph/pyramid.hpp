#pragma once

// Vertical hashing head, lateral hashing modules, the two mediators of the
// consensus fusion, and the binary embedding of consensus codes.
//
// Dimension chain for a q-bit code:
//   m_s4 -> pool 1x1 -> FC -> f_s4 (q)  -> sigmoid -> v
//   m_s3 -> pool 2x2 -> FC -> f_s3 (2q)
//   m_s2 -> pool 4x4 -> FC -> f_s2 (4q)
//   f_M1 = pairpool(f_s2) + f_s3 (2q)
//   f_M2 = pairpool(f_M1) + f_s4 (q)    -> sigmoid -> v_c -> threshold -> bits

#include <bit>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fph/backbone.hpp"
#include "fph/errors.hpp"
#include "fph/parameters.hpp"
#include "fph/tensor.hpp"

namespace fph {

struct HashConfig {
    std::size_t q = 16;

    void validate() const {
        if (q < 8 || q % 4 != 0) {
            throw ConfigError("code length q must be >= 8 and divisible by 4, got " + std::to_string(q));
        }
    }
};

/// Pooled side length used by the lateral module of stage t (t = 2, 3, 4).
constexpr std::size_t lateral_pool_side(std::size_t stage) { return std::size_t{1} << (4 - stage); }

/// Output width of the hash feature for stage t: q * 2^(4 - t).
constexpr std::size_t lateral_feature_width(std::size_t q, std::size_t stage) {
    return q * lateral_pool_side(stage);
}

/// Fully connected maps of the three hashing heads, each with its own weights.
struct PyramidHeads {
    std::size_t q = 0;
    Tensor w_s4, b_s4; // C4       -> q
    Tensor w_s3, b_s3; // C3 * 4   -> 2q
    Tensor w_s2, b_s2; // C2 * 16  -> 4q

    ParameterList parameters() const {
        return {{"head.s4.weight", w_s4}, {"head.s4.bias", b_s4}, {"head.s3.weight", w_s3},
                {"head.s3.bias", b_s3},   {"head.s2.weight", w_s2}, {"head.s2.bias", b_s2}};
    }
};

inline PyramidHeads build_heads(const HashConfig& cfg, std::size_t c2, std::size_t c3, std::size_t c4,
                                std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    PyramidHeads h;
    h.q = cfg.q;
    auto make = [&](std::size_t stage, std::size_t channels, Tensor& w, Tensor& b) {
        const std::size_t side = lateral_pool_side(stage);
        const std::size_t in = channels * side * side;
        const std::size_t out = lateral_feature_width(cfg.q, stage);
        w = fan_in_uniform({out, in}, in, rng);
        b = Tensor::zeros({out}, true);
    };
    make(4, c4, h.w_s4, h.b_s4);
    make(3, c3, h.w_s3, h.b_s3);
    make(2, c2, h.w_s2, h.b_s2);
    return h;
}

struct VerticalOutput {
    Tensor a_s4;
    Tensor f_s4;
    Tensor v;
};

struct LateralOutput {
    Tensor a;
    Tensor f;
};

struct PyramidActivations {
    Tensor a_s4, a_s3, a_s2;
    Tensor f_s4, f_s3, f_s2;
    Tensor f_M1, f_M2;
    Tensor v, v_c;
};

inline VerticalOutput vertical_head(const Tensor& m_s4, const PyramidHeads& heads) {
    VerticalOutput out;
    out.a_s4 = avgpool2d(m_s4, 1, 1);
    out.f_s4 = affine(flatten(out.a_s4), heads.w_s4, heads.b_s4);
    out.v = sigmoid(out.f_s4);
    return out;
}

/// Lateral hashing module for stage 2 or 3. Stage 4 reuses the vertical head.
inline LateralOutput lateral_head(const Tensor& m_st, std::size_t stage, const PyramidHeads& heads) {
    if (stage != 2 && stage != 3) throw ContractError("lateral_head: stage must be 2 or 3");
    const std::size_t side = lateral_pool_side(stage);
    LateralOutput out;
    out.a = avgpool2d(m_st, side, side);
    const auto& w = stage == 2 ? heads.w_s2 : heads.w_s3;
    const auto& b = stage == 2 ? heads.b_s2 : heads.b_s3;
    out.f = affine(flatten(out.a), w, b);
    return out;
}

/// pairpool(f_low) + f_high
inline Tensor mediator(const Tensor& f_low, const Tensor& f_high) {
    if (f_low.rank() != 1 || f_high.rank() != 1 || f_low.size() != 2 * f_high.size()) {
        throw DimensionError("mediator: low feature " + shape_string(f_low.shape()) +
                             " must be twice the length of high feature " + shape_string(f_high.shape()));
    }
    return add(avgpool1d_pairs(f_low), f_high);
}

inline Tensor consensus_code(const Tensor& f_M2) { return sigmoid(f_M2); }

/// Runs both pyramids on the backbone's side outputs.
inline PyramidActivations pyramid_forward(const FeatureMaps& maps, const PyramidHeads& heads) {
    PyramidActivations act;
    auto vert = vertical_head(maps.m_s4, heads);
    auto lat3 = lateral_head(maps.m_s3, 3, heads);
    auto lat2 = lateral_head(maps.m_s2, 2, heads);
    act.a_s4 = vert.a_s4;
    act.f_s4 = vert.f_s4;
    act.v = vert.v;
    act.a_s3 = lat3.a;
    act.f_s3 = lat3.f;
    act.a_s2 = lat2.a;
    act.f_s2 = lat2.f;
    act.f_M1 = mediator(act.f_s2, act.f_s3);
    act.f_M2 = mediator(act.f_M1, act.f_s4);
    act.v_c = consensus_code(act.f_M2);
    return act;
}

// ---------------------------------------------------------------------------
// Binary codes
// ---------------------------------------------------------------------------

inline constexpr std::size_t words_for_bits(std::size_t q) { return (q + 63) / 64; }

/// q bits packed little-endian into 64-bit words: bit i lives in word i / 64
/// at position i % 64. Padding bits are always zero.
class BinaryCode {
public:
    BinaryCode() = default;
    explicit BinaryCode(std::size_t q) : q_(q), words_(words_for_bits(q), 0) {}

    BinaryCode(std::size_t q, std::vector<std::uint64_t> words) : q_(q), words_(std::move(words)) {
        if (words_.size() != words_for_bits(q_)) throw ContractError("BinaryCode: wrong word count for q");
        if (q_ % 64 != 0 && !words_.empty() && (words_.back() >> (q_ % 64)) != 0) {
            throw ContractError("BinaryCode: padding bits must be zero");
        }
    }

    std::size_t q() const { return q_; }
    std::span<const std::uint64_t> words() const { return words_; }

    bool bit(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
    void set(std::size_t i, bool on) {
        const std::uint64_t mask = std::uint64_t{1} << (i % 64);
        if (on) words_[i / 64] |= mask;
        else words_[i / 64] &= ~mask;
    }

    friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

private:
    std::size_t q_ = 0;
    std::vector<std::uint64_t> words_;
};

/// b_i = 1 iff v_c[i] >= 0.5.
inline BinaryCode binarize(std::span<const double> v_c) {
    BinaryCode code(v_c.size());
    for (std::size_t i = 0; i < v_c.size(); ++i) {
        if (!(v_c[i] >= 0.0 && v_c[i] <= 1.0)) {
            throw ContractError("binarize: element " + std::to_string(i) + " = " + std::to_string(v_c[i]) +
                                " outside [0, 1]");
        }
        code.set(i, v_c[i] >= 0.5);
    }
    return code;
}

inline BinaryCode binarize(const Tensor& v_c) { return binarize(v_c.data()); }

} // namespace fph
