#pragma once

// Triplet sampling, the triplet ranking loss on both code spaces, and SGD with
// momentum, weight decay and a step learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "fph/dataset.hpp"
#include "fph/errors.hpp"
#include "fph/model.hpp"
#include "fph/parameters.hpp"
#include "fph/tensor.hpp"

namespace fph {

struct Triplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Unit in which the step learning-rate schedule counts.
enum class ScheduleUnit { epoch, iteration };

struct TrainConfig {
    std::optional<double> margin; // defaults to q / 4
    double lr = 0.003;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::size_t step_size = 100;
    ScheduleUnit schedule_unit = ScheduleUnit::epoch;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    std::size_t triplets_per_anchor = 2;
    double grad_clip = 5.0; // max global gradient L2 norm per step; 0 disables
    std::uint64_t seed = 1;

    double margin_for(std::size_t q) const { return margin.value_or(static_cast<double>(q) / 4.0); }

    void validate() const {
        if (margin && !(*margin > 0)) throw ConfigError("margin must be positive");
        if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
        if (step_size == 0) throw ConfigError("step_size must be positive");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
        if (triplets_per_anchor == 0) throw ConfigError("triplets_per_anchor must be positive");
        if (!(grad_clip >= 0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be >= 0");
    }
};

/// The optimizer profile used for the published ResNet18 experiments.
inline TrainConfig paper_train_profile() {
    TrainConfig cfg;
    cfg.lr = 0.001;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0005;
    cfg.step_size = 1800;
    cfg.epochs = 4000;
    cfg.batch_size = 100;
    cfg.grad_clip = 0.0;
    return cfg;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// max(0, margin + ||v_i - v_j||^2 - ||v_i - v_k||^2)
inline Tensor triplet_loss(const Tensor& v_i, const Tensor& v_j, const Tensor& v_k, double margin) {
    if (v_i.shape() != v_j.shape() || v_i.shape() != v_k.shape()) {
        throw DimensionError("triplet_loss: code shapes differ " + shape_string(v_i.shape()) + ", " +
                             shape_string(v_j.shape()) + ", " + shape_string(v_k.shape()));
    }
    return relu(add_scalar(sub(squared_distance(v_i, v_j), squared_distance(v_i, v_k)), margin));
}

struct CombinedLoss {
    Tensor total;            // (1/M) sum of both triplet losses
    double vertical = 0.0;   // mean triplet loss on v
    double consensus = 0.0;  // mean triplet loss on v_c
};

/// Mean over triplets of the vertical-code loss plus the consensus-code loss.
/// `codes[i]` holds the activations of batch item i.
inline CombinedLoss combined_loss(std::span<const PyramidActivations> codes, std::span<const Triplet> triplets,
                                  double margin) {
    if (triplets.empty()) throw ContractError("combined_loss: empty triplet batch");
    std::vector<Tensor> terms;
    terms.reserve(2 * triplets.size());
    CombinedLoss out;
    for (const auto& t : triplets) {
        if (t.anchor >= codes.size() || t.positive >= codes.size() || t.negative >= codes.size()) {
            throw ContractError("combined_loss: triplet index outside the batch");
        }
        const auto& a = codes[t.anchor];
        const auto& p = codes[t.positive];
        const auto& n = codes[t.negative];
        terms.push_back(triplet_loss(a.v, p.v, n.v, margin));
        out.vertical += terms.back().item();
        terms.push_back(triplet_loss(a.v_c, p.v_c, n.v_c, margin));
        out.consensus += terms.back().item();
    }
    const double inv = 1.0 / static_cast<double>(triplets.size());
    out.total = scale(add_n(terms), inv);
    out.vertical *= inv;
    out.consensus *= inv;
    return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// For every anchor that has a same-class partner, draws up to
/// `triplets_per_anchor` triplets with a uniform positive and a uniform
/// negative. Returns an empty list when the batch holds no valid triplet.
inline std::vector<Triplet> sample_triplets(std::span<const std::uint32_t> labels, std::size_t triplets_per_anchor,
                                            std::mt19937_64& rng) {
    std::vector<Triplet> out;
    std::vector<std::size_t> positives, negatives;
    for (std::size_t a = 0; a < labels.size(); ++a) {
        positives.clear();
        negatives.clear();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (i == a) continue;
            (labels[i] == labels[a] ? positives : negatives).push_back(i);
        }
        if (positives.empty() || negatives.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_neg(0, negatives.size() - 1);
        for (std::size_t t = 0; t < triplets_per_anchor; ++t) {
            const std::size_t p = positives[pick_pos(rng)];
            const std::size_t n = negatives[pick_neg(rng)];
            out.push_back({a, p, n});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<std::vector<double>> velocity;
    std::size_t iteration = 0;
    double lr = 0.0;
};

/// lr * 0.1^floor(counter / step_size)
inline double scheduled_lr(const TrainConfig& cfg, std::size_t counter) {
    return cfg.lr * std::pow(0.1, static_cast<double>(counter / cfg.step_size));
}

/// velocity = momentum * velocity + (grad + weight_decay * param)
/// param   -= lr * velocity
/// Uses state.lr as the current learning rate and bumps state.iteration.
inline void sgd_step(ParameterList& params, OptimizerState& state, const TrainConfig& cfg) {
    if (state.velocity.empty()) {
        for (const auto& p : params) state.velocity.emplace_back(p.tensor.size(), 0.0);
    }
    if (state.velocity.size() != params.size()) throw ContractError("sgd_step: optimizer state does not match");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& t = params[k].tensor;
        auto& vel = state.velocity[k];
        if (vel.size() != t.size()) throw ContractError("sgd_step: velocity shape mismatch for " + params[k].name);
        auto data = t.mutable_data();
        auto grad = t.grad();
        const bool has_grad = t.has_grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = (has_grad ? grad[i] : 0.0) + cfg.weight_decay * data[i];
            vel[i] = cfg.momentum * vel[i] + g;
            data[i] -= state.lr * vel[i];
        }
    }
    ++state.iteration;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t iter = 0; // iterations completed at the end of this epoch
    double loss_vertical = 0.0;
    double loss_consensus = 0.0;
    double loss_combined = 0.0;
    double lr = 0.0;
    double max_grad_norm = 0.0; // before clipping
};

struct TrainResult {
    std::vector<EpochRecord> trace;
    std::size_t iterations = 0;
    std::size_t skipped_batches = 0;
};

namespace detail {

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before rescaling.
inline double clip_grad_norm(ParameterList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& p : params) {
            for (double& g : p.tensor.node().grad) g *= f;
        }
    }
    return norm;
}

// Class-balanced batches: each class contributes ceil(batch / classes) items
// drawn from its own shuffled cycle; the union is shuffled and cut to size.
inline std::vector<std::vector<std::size_t>> balanced_batches(std::span<const std::uint32_t> labels,
                                                              std::size_t batch_size, std::mt19937_64& rng) {
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (auto& [label, idx] : by_class) std::shuffle(idx.begin(), idx.end(), rng);

    const std::size_t classes = by_class.size();
    const std::size_t per_class = (batch_size + classes - 1) / classes;
    const std::size_t batches = (labels.size() + batch_size - 1) / batch_size;
    std::map<std::uint32_t, std::size_t> cursor;

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < batches; ++b) {
        std::vector<std::size_t> batch;
        for (auto& [label, idx] : by_class) {
            const std::size_t take = std::min(per_class, idx.size());
            auto& c = cursor[label];
            for (std::size_t t = 0; t < take; ++t) {
                batch.push_back(idx[c]);
                c = (c + 1) % idx.size();
            }
        }
        std::shuffle(batch.begin(), batch.end(), rng);
        if (batch.size() > batch_size) batch.resize(batch_size);
        out.push_back(std::move(batch));
    }
    return out;
}

} // namespace detail

/// Minimizes the combined loss over `data`. Deterministic given cfg.seed.
inline TrainResult train(const LabeledImages& data, HashingNetwork& net, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
    cfg.validate();
    if (data.size() != data.labels.size()) throw ConfigError("dataset images and labels differ in length");
    if (data.class_count() < 2) throw ConfigError("training needs at least two classes");

    const double margin = cfg.margin_for(net.q());
    std::mt19937_64 rng(cfg.seed);
    auto params = net.parameters();
    OptimizerState state;
    TrainResult result;
    zero_grads(params);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = detail::balanced_batches(data.labels, cfg.batch_size, rng);
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t counted = 0;
        for (const auto& batch : batches) {
            state.lr = scheduled_lr(cfg, cfg.schedule_unit == ScheduleUnit::epoch ? epoch : state.iteration);
            std::vector<std::uint32_t> labels;
            labels.reserve(batch.size());
            for (auto i : batch) labels.push_back(data.labels[i]);
            auto triplets = sample_triplets(labels, cfg.triplets_per_anchor, rng);
            if (triplets.empty()) {
                ++result.skipped_batches;
                if (log) *log << "epoch " << epoch << ": batch without a valid triplet skipped\n";
                continue;
            }
            std::vector<PyramidActivations> acts;
            acts.reserve(batch.size());
            for (auto i : batch) acts.push_back(net.forward(data.images[i]));
            auto loss = combined_loss(acts, triplets, margin);
            if (!std::isfinite(loss.total.item())) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
            }
            backward(loss.total);
            rec.max_grad_norm = std::max(rec.max_grad_norm, detail::clip_grad_norm(params, cfg.grad_clip));
            sgd_step(params, state, cfg);
            zero_grads(params);

            rec.loss_vertical += loss.vertical;
            rec.loss_consensus += loss.consensus;
            rec.loss_combined += loss.total.item();
            rec.lr = state.lr;
            ++counted;
        }
        if (counted > 0) {
            const double inv = 1.0 / static_cast<double>(counted);
            rec.loss_vertical *= inv;
            rec.loss_consensus *= inv;
            rec.loss_combined *= inv;
        }
        rec.iter = state.iteration;
        result.trace.push_back(rec);
    }
    for (const auto& p : params) {
        for (double v : p.tensor.data()) {
            if (!std::isfinite(v)) throw NumericError("parameter '" + p.name + "' became non-finite");
        }
    }
    result.iterations = state.iteration;
    return result;
}

} // namespace fph
