#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "fph/training.hpp"
#include "support/checks.hpp"

using namespace fph;

namespace {

PyramidActivations codes(std::vector<double> v, std::vector<double> vc) {
    PyramidActivations a;
    a.v = Tensor::vector(std::move(v));
    a.v_c = Tensor::vector(std::move(vc));
    return a;
}

// Two classes of 4 tiny images each, separable by mean brightness.
LabeledImages tiny_dataset(std::size_t side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    LabeledImages d;
    for (std::uint32_t label = 0; label < 2; ++label) {
        for (int i = 0; i < 4; ++i) {
            std::vector<double> px(3 * side * side);
            for (std::size_t k = 0; k < px.size(); ++k) {
                const bool left = (k % side) < side / 2;
                px[k] = (left == (label == 0) ? 0.8 : 0.2) + noise(rng);
            }
            d.images.push_back(Tensor::from({3, side, side}, std::move(px)));
            d.labels.push_back(label);
        }
    }
    return d;
}

std::vector<StageSpec> tiny_stages() { return {{4, 1, true}, {4, 1, true}, {4, 1, true}, {4, 1, true}, {4, 1, true}}; }

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST(TripletLossTest, Examples) {
    auto zero = Tensor::vector({0, 0, 0, 0}), one = Tensor::vector({1, 1, 1, 1});
    EXPECT_EQ(triplet_loss(zero, zero, one, 2.0)[0], 0.0);
    EXPECT_EQ(triplet_loss(zero, zero, Tensor::vector({1, 0, 0, 0}), 2.0)[0], 1.0);
    auto vi = Tensor::vector({0.2, 0.9, 0.4}), vj = Tensor::vector({0.7, 0.1, 0.5});
    EXPECT_DOUBLE_EQ(triplet_loss(vi, vj, vj, 1.75)[0], 1.75);
    EXPECT_THROW(triplet_loss(zero, zero, Tensor::vector({1, 1}), 2.0), DimensionError);
}

TEST(TripletLossTest, BoundedByMarginPlusQ) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> a(16), b(16), c(16);
        for (int i = 0; i < 16; ++i) a[i] = u(rng), b[i] = u(rng), c[i] = u(rng);
        const double l = triplet_loss(Tensor::vector(a), Tensor::vector(b), Tensor::vector(c), 4.0)[0];
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 4.0 + 16.0);
    }
}

TEST(CombinedLossTest, ZeroWhenAllMarginsHold) {
    std::vector<PyramidActivations> acts = {codes({0, 0}, {0, 0}), codes({0, 0}, {0, 0}), codes({1, 1}, {1, 1})};
    std::vector<Triplet> t = {{0, 1, 2}};
    auto l = combined_loss(acts, t, 1.0);
    EXPECT_EQ(l.total[0], 0.0);
}

TEST(CombinedLossTest, SplitsIntoVerticalAndConsensus) {
    // (0,1,2): 0.5 per space; (0,1,3): 1.0 per space
    std::vector<PyramidActivations> acts = {codes({0, 0}, {0, 0}), codes({0, 0}, {0, 0}),
                                            codes({0.5, 0.5}, {0.5, 0.5}), codes({0, 0}, {0, 0})};
    std::vector<Triplet> t = {{0, 1, 2}, {0, 1, 3}};
    auto l = combined_loss(acts, t, 1.0);
    EXPECT_DOUBLE_EQ(l.total[0], 1.5);
    EXPECT_DOUBLE_EQ(l.vertical, 0.75);
    EXPECT_DOUBLE_EQ(l.consensus, 0.75);
}

TEST(CombinedLossTest, PerTripletSumsAverage) {
    // per-triplet sums 3.0 and 1.0 -> 2.0
    std::vector<PyramidActivations> acts = {codes({0}, {0}), codes({0}, {0}), codes({0}, {0}), codes({1}, {1})};
    auto l = combined_loss(acts, std::vector<Triplet>{{0, 1, 2}, {0, 1, 3}}, 1.5);
    EXPECT_DOUBLE_EQ(l.total[0], 2.0);
}

TEST(CombinedLossTest, EqualsMeanOfSingles) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<PyramidActivations> acts;
    for (int i = 0; i < 5; ++i) {
        std::vector<double> v(8), vc(8);
        for (int k = 0; k < 8; ++k) v[k] = u(rng), vc[k] = u(rng);
        acts.push_back(codes(v, vc));
    }
    std::vector<Triplet> ts = {{0, 1, 2}, {3, 4, 0}, {2, 1, 4}};
    double mean = 0;
    for (const auto& t : ts) mean += combined_loss(acts, std::vector<Triplet>{t}, 2.0).total[0] / 3;
    EXPECT_NEAR(combined_loss(acts, ts, 2.0).total[0], mean, 1e-14);
}

TEST(CombinedLossTest, EmptyBatchRejected) {
    std::vector<PyramidActivations> acts = {codes({0}, {0})};
    EXPECT_THROW(combined_loss(acts, {}, 1.0), ContractError);
    EXPECT_THROW(combined_loss(acts, std::vector<Triplet>{{0, 0, 3}}, 1.0), ContractError);
}

TEST(SampleTripletsTest, OnePerAnchor) {
    std::mt19937_64 rng(1);
    std::vector<std::uint32_t> labels = {0, 0, 1, 1};
    auto t = sample_triplets(labels, 1, rng);
    ASSERT_EQ(t.size(), 4u);
    for (const auto& x : t) {
        EXPECT_EQ(labels[x.anchor], labels[x.positive]);
        EXPECT_NE(x.anchor, x.positive);
        EXPECT_NE(labels[x.anchor], labels[x.negative]);
    }
}

TEST(SampleTripletsTest, SingleClassGivesNothing) {
    std::mt19937_64 rng(1);
    std::vector<std::uint32_t> labels = {0, 0, 0, 0};
    EXPECT_TRUE(sample_triplets(labels, 2, rng).empty());
}

TEST(SampleTripletsTest, SingletonAnchorsSkipped) {
    std::mt19937_64 rng(1);
    std::vector<std::uint32_t> labels = {0, 1, 1, 2};
    auto t = sample_triplets(labels, 3, rng);
    EXPECT_EQ(t.size(), 6u);
    for (const auto& x : t) EXPECT_EQ(labels[x.anchor], 1u);
}

TEST(SampleTripletsTest, Deterministic) {
    std::vector<std::uint32_t> labels = {0, 1, 2, 0, 1, 2, 0, 1};
    std::mt19937_64 a(5), b(5);
    EXPECT_EQ(sample_triplets(labels, 2, a), sample_triplets(labels, 2, b));
}

TEST(SgdTest, PlainStep) {
    ParameterList p = {{"w", Tensor::vector({0.0}, true)}};
    p[0].tensor.node().ensure_grad()[0] = 1.0;
    TrainConfig cfg;
    cfg.momentum = 0;
    cfg.weight_decay = 0;
    OptimizerState st;
    st.lr = 0.1;
    sgd_step(p, st, cfg);
    EXPECT_DOUBLE_EQ(p[0].tensor[0], -0.1);
    EXPECT_EQ(st.iteration, 1u);
}

TEST(SgdTest, ZeroGradientNoDecayKeepsParameters) {
    ParameterList p = {{"w", Tensor::vector({0.3, -2.0}, true)}};
    TrainConfig cfg;
    cfg.weight_decay = 0;
    OptimizerState st;
    st.lr = 0.5;
    sgd_step(p, st, cfg);
    sgd_step(p, st, cfg);
    EXPECT_EQ(p[0].tensor[0], 0.3);
    EXPECT_EQ(p[0].tensor[1], -2.0);
    for (double v : st.velocity[0]) EXPECT_EQ(v, 0.0);
}

TEST(SgdTest, MomentumAndWeightDecay) {
    ParameterList p = {{"w", Tensor::vector({1.0}, true)}};
    TrainConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.5;
    OptimizerState st;
    st.lr = 0.1;
    p[0].tensor.node().ensure_grad()[0] = 2.0;
    sgd_step(p, st, cfg); // v = 2.5, w = 0.75
    EXPECT_DOUBLE_EQ(p[0].tensor[0], 0.75);
    sgd_step(p, st, cfg); // v = 0.9 * 2.5 + 2 + 0.375 = 4.625, w = 0.75 - 0.4625
    EXPECT_DOUBLE_EQ(st.velocity[0][0], 4.625);
    EXPECT_DOUBLE_EQ(p[0].tensor[0], 0.2875);
}

TEST(ClipTest, RescalesJointNorm) {
    ParameterList p = {{"a", Tensor::vector({0.0}, true)}, {"b", Tensor::vector({0.0}, true)}};
    p[0].tensor.node().ensure_grad()[0] = 3.0;
    p[1].tensor.node().ensure_grad()[0] = 4.0;
    EXPECT_DOUBLE_EQ(detail::clip_grad_norm(p, 10.0), 5.0);
    EXPECT_EQ(p[0].tensor.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(detail::clip_grad_norm(p, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(p[0].tensor.grad()[0], 0.6);
    EXPECT_DOUBLE_EQ(p[1].tensor.grad()[0], 0.8);
    p[1].tensor.node().ensure_grad()[0] = 40.0;
    detail::clip_grad_norm(p, 0.0);
    EXPECT_EQ(p[1].tensor.grad()[0], 40.0);
}

TEST(ScheduleTest, StepDecay) {
    auto cfg = paper_train_profile();
    EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 0), 0.001);
    EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 1799), 0.001);
    EXPECT_NEAR(scheduled_lr(cfg, 1800), 0.0001, 1e-18);
    EXPECT_NEAR(scheduled_lr(cfg, 3600), 0.00001, 1e-19);
}

TEST(TrainConfigTest, Validation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.margin_for(16), 4.0);
    cfg.momentum = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.margin = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.batch_size = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.grad_clip = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_EQ(paper_train_profile().grad_clip, 0.0);
}

TEST(BalancedBatchesTest, CoversClassesEvenly) {
    std::vector<std::uint32_t> labels;
    for (std::uint32_t c = 0; c < 4; ++c) {
        for (int i = 0; i < 10; ++i) labels.push_back(c);
    }
    std::mt19937_64 rng(2);
    auto batches = detail::balanced_batches(labels, 8, rng);
    EXPECT_EQ(batches.size(), 5u);
    for (const auto& b : batches) {
        ASSERT_EQ(b.size(), 8u);
        std::map<std::uint32_t, int> per;
        for (auto i : b) per[labels[i]]++;
        for (auto [c, n] : per) EXPECT_EQ(n, 2);
        EXPECT_EQ(std::set<std::size_t>(b.begin(), b.end()).size(), b.size());
    }
}

TEST(TrainTest, LossDecreases) {
    auto data = tiny_dataset(32, 1);
    HashingNetwork net(tiny_stages(), 32, HashConfig{16}, 4);
    auto result = train(data, net, quick_config());
    ASSERT_EQ(result.trace.size(), 50u);
    EXPECT_LT(result.trace.back().loss_combined, result.trace.front().loss_combined);
    for (const auto& r : result.trace) EXPECT_GE(r.loss_combined, 0.0);
    EXPECT_EQ(result.iterations, 50u);
}

TEST(TrainTest, ZeroLearningRateLeavesParameters) {
    auto data = tiny_dataset(32, 1);
    HashingNetwork net(tiny_stages(), 32, HashConfig{16}, 4);
    HashingNetwork reference(tiny_stages(), 32, HashConfig{16}, 4);
    auto cfg = quick_config();
    cfg.lr = 0;
    cfg.epochs = 5;
    train(data, net, cfg);
    EXPECT_TRUE(checks::same_bits(net.parameters(), reference.parameters()));
}

TEST(TrainTest, SameSeedSameTraceAndParameters) {
    auto data = tiny_dataset(32, 1);
    auto cfg = quick_config();
    cfg.epochs = 8;
    HashingNetwork a(tiny_stages(), 32, HashConfig{16}, 4), b(tiny_stages(), 32, HashConfig{16}, 4);
    auto ra = train(data, a, cfg);
    auto rb = train(data, b, cfg);
    ASSERT_EQ(ra.trace.size(), rb.trace.size());
    for (std::size_t i = 0; i < ra.trace.size(); ++i) {
        EXPECT_EQ(ra.trace[i].loss_combined, rb.trace[i].loss_combined);
        EXPECT_EQ(ra.trace[i].lr, rb.trace[i].lr);
    }
    EXPECT_TRUE(checks::same_bits(a.parameters(), b.parameters()));
}

TEST(TrainTest, OneClassRejected) {
    auto data = tiny_dataset(32, 1);
    for (auto& l : data.labels) l = 0;
    HashingNetwork net(tiny_stages(), 32, HashConfig{16}, 4);
    EXPECT_THROW(train(data, net, quick_config()), ConfigError);
}

TEST(TrainTest, ScheduleCountsEpochsOrIterations) {
    auto data = tiny_dataset(32, 1);
    auto cfg = quick_config();
    cfg.epochs = 4;
    cfg.batch_size = 4; // two iterations per epoch
    cfg.step_size = 2;
    HashingNetwork net(tiny_stages(), 32, HashConfig{16}, 4);
    auto by_epoch = train(data, net, cfg);
    EXPECT_DOUBLE_EQ(by_epoch.trace[1].lr, cfg.lr);
    EXPECT_NEAR(by_epoch.trace[2].lr, cfg.lr * 0.1, 1e-15);
    cfg.schedule_unit = ScheduleUnit::iteration;
    HashingNetwork net2(tiny_stages(), 32, HashConfig{16}, 4);
    auto by_iter = train(data, net2, cfg);
    EXPECT_NEAR(by_iter.trace[1].lr, cfg.lr * 0.1, 1e-15);
    EXPECT_EQ(by_iter.trace.back().iter, 8u);
}
