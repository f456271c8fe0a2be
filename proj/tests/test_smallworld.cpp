#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "xbarnet/smallworld.hpp"

using namespace xbarnet;

TEST(Metrics, MatchPathEnumeration) {
    RngStream rng(1, "graphs");
    for (int trial = 0; trial < 100; ++trial) {
        const double density = rng.uniform(0.02, 0.5);
        const Network net = oracle::random_sparse_mlp(rng, 30, density);
        const auto graph = contribution_reachability(net);
        const auto ref = oracle::enumerate_paths(net);
        ASSERT_EQ(graph.size(), ref.L.size());
        for (std::size_t k = 0; k < graph.size(); ++k) {
            EXPECT_EQ(graph.edge_count(k), ref.edges[k]) << "trial " << trial << " layer " << k;
            EXPECT_EQ(metric_L(graph, k), ref.L[k]);
            EXPECT_EQ(metric_C(graph, k), ref.C[k]);
        }
    }
}

TEST(Metrics, HandChain) {
    // 2 -> 2 -> 2 with a single path from input 0 to class 1.
    Layer a = make_dense(2, 2), b = make_dense(2, 2);
    std::get<Dense>(a).params.weight = Tensor({2, 2}, {0, 1, 0, 0});
    std::get<Dense>(b).params.weight = Tensor({2, 2}, {0, 0, 0, 1});
    Network net({2}, {a, ReLU{}, b, SoftmaxCrossEntropy{}});
    const auto g = contribution_reachability(net);
    EXPECT_TRUE(g.reaches(0, 0, 1));
    EXPECT_FALSE(g.reaches(0, 1, 1));
    EXPECT_EQ(metric_L(g, 0), 0.5);
    EXPECT_EQ(metric_C(g, 0), 0.5);
    EXPECT_EQ(metric_L(g, 1), 0.5);
}

TEST(Metrics, DenseNetworkIsFullyConnected) {
    RngStream rng(2, "init");
    std::vector<std::size_t> widths{7, 5, 3};
    const Network net = make_mlp(widths, rng);
    const auto g = contribution_reachability(net);
    EXPECT_EQ(metric_L(g, 0), 7.0);
    EXPECT_EQ(metric_C(g, 0), 3.0);
    EXPECT_EQ(metric_L(g, 1), 5.0);
}

TEST(Metrics, ConvChannelsCollapse) {
    RngStream rng(3, "init");
    std::vector<Layer> layers{make_conv2d(1, 2, 3), ReLU{}, make_dense(2 * 4 * 4, 3), SoftmaxCrossEntropy{}};
    Network net({1, 6, 6}, std::move(layers));
    init_he_uniform(net, rng);
    // Channel 1 loses every outgoing dense weight.
    auto& d = net.params(2);
    Mask m = Mask::ones(d.weight.shape());
    for (std::size_t pos = 0; pos < 16; ++pos)
        for (std::size_t c = 0; c < 3; ++c) m.set(16 + pos, c, false);
    d.set_sparsity(m);
    const auto g = contribution_reachability(net);
    ASSERT_EQ(g.units(0), 2u);  // conv units are output channels
    EXPECT_EQ(g.classes_reached(0, 0), 3u);
    EXPECT_EQ(g.classes_reached(0, 1), 0u);
}

TEST(Band, HalfWidthAndDensity) {
    SmallWorldConfig cfg;
    cfg.target_density = 1.0;
    // centres 1, 3, 6, 8: reaching row 0 from 8 and row 9 from 1 needs 8
    EXPECT_EQ(band_half_width(10, 4, cfg), 8u);
    cfg.target_density = 1e-9;
    EXPECT_EQ(band_half_width(10, 4, cfg), 0u);
    cfg.target_density = 0.3;
    RngStream rng(4, "sw-mask");
    cfg.p = 0.0;
    const Mask m = build_initial_mask(100, 50, cfg, rng);
    EXPECT_GE(m.density(), 0.3 - 1e-12);
    const auto h = band_half_width(100, 50, cfg);
    ASSERT_GT(h, 0u);
    SmallWorldConfig narrower = cfg;
    narrower.window = h - 1;  // one less half-width falls short
    EXPECT_THROW(band_half_width(100, 50, narrower), std::invalid_argument);
    for (std::size_t j = 0; j < 50; ++j) {
        const std::size_t centre = 2 * j + 1;  // floor((j + 0.5) * 100 / 50)
        EXPECT_TRUE(m.at(centre, j));
    }
    cfg.window = 2;
    EXPECT_THROW(band_half_width(100, 50, cfg), std::invalid_argument);
}

TEST(Band, ShortcutsFollowP) {
    SmallWorldConfig cfg;
    cfg.target_density = 1e-9;
    cfg.p = 0.05;
    RngStream rng(5, "sw-mask");
    const Mask m = build_initial_mask(400, 300, cfg, rng);
    // Band of half-width 0 plus Bernoulli(p) elsewhere.
    const double n = 400.0 * 300.0 - 300.0;
    const double extra = static_cast<double>(m.count()) - 300.0;
    EXPECT_NEAR(extra / n, cfg.p, 3.0 * std::sqrt(cfg.p * (1 - cfg.p) / n) + 300.0 / n);
}

TEST(Prune, KeepsCeilOfSurvivors) {
    RngStream rng(6, "init");
    std::vector<std::size_t> widths{9, 7, 3};
    Network net = make_mlp(widths, rng);
    RngStream sc(6, "sw-shortcut");
    const auto report = prune_threshold(net, 0.5, 0.0, sc);
    EXPECT_EQ(net.params(0).sparsity.count(), static_cast<std::size_t>(std::ceil(0.5 * 63)));
    EXPECT_EQ(net.params(2).sparsity.count(), static_cast<std::size_t>(std::ceil(0.5 * 21)));
    EXPECT_EQ(report.layers[0].after, 32u);
    // The kept weights are the largest in magnitude.
    double min_kept = 1e9, max_dropped = 0;
    for (std::size_t i = 0; i < 63; ++i) {
        const double a = std::abs(net.params(0).weight[i]);
        if (net.params(0).sparsity[i]) min_kept = std::min(min_kept, a);
    }
    RngStream rng2(6, "init");
    const Network orig = make_mlp(widths, rng2);
    for (std::size_t i = 0; i < 63; ++i) {
        if (!net.params(0).sparsity[i]) max_dropped = std::max(max_dropped, std::abs(orig.params(0).weight[i]));
    }
    EXPECT_GE(min_kept, max_dropped);
}

TEST(Prune, ShortcutProbabilityOneKeepsAll) {
    RngStream rng(7, "init");
    std::vector<std::size_t> widths{9, 7, 3};
    Network net = make_mlp(widths, rng);
    RngStream sc(7, "sw-shortcut");
    const auto r = prune_threshold(net, 0.9, 1.0, sc);
    EXPECT_EQ(net.weight_count(), 9u * 7u + 7u * 3u);
    EXPECT_GT(r.layers[0].shortcuts, 0u);
}

TEST(Prune, NeverIncreasesPathLength) {
    RngStream rng(8, "graphs");
    for (int trial = 0; trial < 30; ++trial) {
        Network net = oracle::random_sparse_mlp(rng, 30, 0.4);
        RngStream sc = rng.child("sc");
        const auto r = prune_threshold(net, rng.uniform(0.0, 0.9), 0.0, sc);
        for (const auto& l : r.layers) {
            EXPECT_LE(l.L_after, l.L_before);
            EXPECT_LE(l.C_after, l.C_before);
        }
    }
}

TEST(Prune, RejectsBadThreshold) {
    RngStream rng(9, "init");
    std::vector<std::size_t> widths{3, 2};
    Network net = make_mlp(widths, rng);
    EXPECT_THROW(prune_threshold(net, 1.0, 0.0, rng), std::invalid_argument);
    EXPECT_THROW(prune_threshold(net, 0.5, 1.5, rng), std::invalid_argument);
}

TEST(Schedule, GeometricEndpoints) {
    const auto s = SmallWorldSchedule::geometric({0.4, 1.0}, {0.1, 0.5}, 2, 3, 1);
    ASSERT_EQ(s.rounds.size(), 2u);
    EXPECT_NEAR(s.rounds[0].density[0], 0.2, 1e-12);
    EXPECT_NEAR(s.rounds[1].density[0], 0.1, 1e-12);
    EXPECT_NEAR(s.rounds[1].density[1], 0.5, 1e-12);
    EXPECT_THROW(s.validate(3), std::invalid_argument);
}

TEST(Pipeline, TraceAndCsv) {
    Dataset d;
    d.sample_shape = {8};
    d.num_classes = 2;
    RngStream rng(10, "data");
    for (int i = 0; i < 200; ++i) {
        int sum = 0;
        for (int k = 0; k < 8; ++k) {
            auto b = static_cast<std::uint8_t>(rng.index(256));
            d.pixels.push_back(b);
            sum += b;
        }
        d.labels.push_back(sum > 8 * 128 ? 1 : 0);
    }
    RngStream init(10, "init");
    std::vector<std::size_t> widths{8, 12, 2};
    SmallWorldConfig cfg;
    const auto sched = SmallWorldSchedule::geometric({0.8, 1.0}, {0.2, 0.5}, 3, 2, 1);
    const auto res = smallworld_pipeline(make_mlp(widths, init), d, d, cfg, sched, SgdConfig{0.05, 0.9, 16, 1}, 10);
    ASSERT_EQ(res.trace.size(), 2u * 4u);
    EXPECT_EQ(res.dense_parameters, 8u * 12u + 12u * 2u);
    EXPECT_EQ(res.parameters, res.network.weight_count());
    EXPECT_NEAR(res.reduction(), 1.0 - static_cast<double>(res.parameters) / res.dense_parameters, 1e-15);
    for (const auto& row : res.trace) EXPECT_NEAR(row.theta, 1.0 - row.density, 1e-15);
    std::ostringstream out;
    write_metrics_csv(out, res.trace);
    EXPECT_EQ(out.str().rfind("round,layer,theta,density,L,C,accuracy\n", 0), 0u);
}
