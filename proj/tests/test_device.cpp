#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "stats.hpp"
#include "xbarnet/crossbar.hpp"
#include "xbarnet/device.hpp"

using namespace xbarnet;

namespace {

DeviceConfig ideal_device() {
    DeviceConfig cfg;
    cfg.sigma_write = 0.0;
    cfg.sf0_rate = 0.0;
    cfg.sf1_rate = 0.0;
    return cfg;
}

Tensor uniform_weights(std::size_t rows, std::size_t cols, double lo, double hi, RngStream& rng) {
    Tensor w({rows, cols});
    for (auto& v : w.values()) v = rng.uniform(lo, hi);
    return w;
}

}  // namespace

TEST(Quantize, HalfMapsToLevel23) {
    // 32 levels over [-1, 1]: step 2/31, (0.5 + 1) / (2/31) = 23.25.
    const auto q = quantize_weight(0.5, WeightScale{-1.0, 1.0}, 32);
    EXPECT_EQ(q.level, 23);
    EXPECT_NEAR(q.value, 15.0 / 31.0, 1e-15);
}

TEST(Quantize, EndpointsClampAndMidpointsRoundDown) {
    const WeightScale s{-1.0, 1.0};
    EXPECT_EQ(quantize_weight(-5.0, s, 32).level, 0);
    EXPECT_EQ(quantize_weight(5.0, s, 32).level, 31);
    EXPECT_EQ(quantize_weight(1.0, s, 32).value, 1.0);
    // Midpoint between levels 0 and 1 of a 3-level grid over [0, 2].
    EXPECT_EQ(quantize_weight(0.5, WeightScale{0.0, 2.0}, 3).level, 0);
    EXPECT_THROW(quantize_weight(0.0, s, 1), std::invalid_argument);
}

TEST(Quantize, ErrorAtMostHalfStep) {
    RngStream rng(4, "q");
    const WeightScale s{-0.7, 0.7};
    const double half = 0.5 * 1.4 / 31.0;
    for (int i = 0; i < 1000; ++i) {
        const double w = rng.uniform(-0.7, 0.7);
        EXPECT_LE(std::abs(quantize_weight(w, s, 32).value - w), half + 1e-15);
    }
}

TEST(Conductance, LinearMapRoundTrips) {
    const DeviceConfig cfg;
    const WeightScale s{-2.0, 2.0};
    EXPECT_DOUBLE_EQ(weight_to_conductance(-2.0, s, cfg), cfg.g_off);
    EXPECT_DOUBLE_EQ(weight_to_conductance(2.0, s, cfg), cfg.g_on);
    EXPECT_NEAR(conductance_to_weight(weight_to_conductance(0.3, s, cfg), s, cfg), 0.3, 1e-12);
}

TEST(Conductance, ScaleFromWeights) {
    Tensor w({2, 2}, {0.1, -0.4, 0.3, 0.2});
    const auto s = WeightScale::from_weights(w);
    EXPECT_DOUBLE_EQ(s.w_min, -0.4);
    EXPECT_DOUBLE_EQ(s.w_max, 0.4);
    const auto z = WeightScale::from_weights(Tensor({2}, 0.0));
    EXPECT_LT(z.w_min, z.w_max);
}

TEST(Device, WriteStaysInRange) {
    DeviceConfig cfg;
    cfg.sigma_write = 2.0;
    RngStream rng(5, "write");
    for (int i = 0; i < 10000; ++i) {
        const double g = sample_write(rng.uniform(cfg.g_off, cfg.g_on), cfg, rng);
        ASSERT_GE(g, cfg.g_off);
        ASSERT_LE(g, cfg.g_on);
    }
}

TEST(Device, LogResistanceSpreadMatchesSigma) {
    const DeviceConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        RngStream rng(seed, "write");
        const double gt = 5e-5;
        const std::size_t n = 50000;
        double s = 0, ss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = std::log(gt / sample_write(gt, cfg, rng));  // ln R - ln R_target
            s += d;
            ss += d * d;
        }
        const double mean = s / n;
        const double sd = std::sqrt((ss - n * mean * mean) / (n - 1));
        EXPECT_TRUE(stats::stddev_within(sd, cfg.sigma_write, n)) << "seed " << seed << " sd " << sd;
        EXPECT_LE(std::abs(mean), 3.0 * cfg.sigma_write / std::sqrt(static_cast<double>(n)));
    }
}

TEST(Device, FaultRatesWithinInterval) {
    const DeviceConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        RngStream rng(seed, "faults");
        const auto fm = inject_faults(300, 300, cfg, rng);
        const std::size_t n = fm.size();
        const double sf1 = static_cast<double>(fm.count(FaultCode::SF1)) / n;
        const double sf0 = static_cast<double>(fm.count(FaultCode::SF0)) / n;
        EXPECT_LE(std::abs(sf1 - cfg.sf1_rate), stats::binomial_halfwidth(cfg.sf1_rate, n)) << seed;
        EXPECT_LE(std::abs(sf0 - cfg.sf0_rate), stats::binomial_halfwidth(cfg.sf0_rate, n)) << seed;
    }
}

TEST(Device, InvalidConfigRejected) {
    DeviceConfig c;
    c.num_levels = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = DeviceConfig{};
    c.sf0_rate = 0.95;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = DeviceConfig{};
    c.g_off = c.g_on;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Device, EffectiveWeightsAlignWithCrossbar) {
    const DeviceConfig cfg;
    RngStream wr(7, "w");
    const Tensor w = uniform_weights(20, 15, -1, 1, wr);
    RngStream fr(7, "faults");
    const auto fm = inject_faults(20, 15, cfg, fr);
    const auto scale = WeightScale::from_weights(w);
    RngStream a(7, "write"), b(7, "write");
    const auto eff = effective_weight_matrix(w, scale, cfg, fm, a);
    CrossbarArray x(cfg, fm, scale);
    x.program_once(w, b);
    for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(eff.weights[k], x.effective_weights()[k], 1e-15);
    std::size_t pre = 0, post = 0;
    for (auto c : eff.histogram.pre) pre += c;
    for (auto c : eff.histogram.post) post += c;
    EXPECT_EQ(pre, w.size());
    EXPECT_EQ(post, w.size());
}

TEST(Crossbar, ReadRequiresProgramming) {
    CrossbarArray x(DeviceConfig{}, FaultMap(2, 2), WeightScale{});
    EXPECT_THROW(x.read_mvm(Tensor({2}, 1.0)), std::logic_error);
}

TEST(Crossbar, IdealDeviceReadsQuantizedProduct) {
    const auto cfg = ideal_device();
    Tensor w({2, 2}, {1, 2, 3, 4});
    CrossbarArray x(cfg, FaultMap(2, 2), WeightScale::symmetric(4.0));
    RngStream rng(1, "write");
    x.program_once(w, rng);
    const Tensor y = x.read_mvm(Tensor({2}, {1, 1}));
    // 32 levels over [-4, 4] hold 1, 2, 3, 4 to within half a step.
    const double half = 4.0 / 31.0;
    EXPECT_NEAR(y[0], 4.0, 2 * half);
    EXPECT_NEAR(y[1], 6.0, 2 * half);
    EXPECT_EQ(x.read_count(), 1u);
    EXPECT_EQ(x.write_pulse_count(), 4u);
    x.read_mvm(Tensor({3, 2}, 1.0));
    EXPECT_EQ(x.read_count(), 4u);
    EXPECT_THROW(x.read_mvm(Tensor({3}, 1.0)), DimensionError);
}

TEST(Crossbar, ReadDoesNotDisturbConductance) {
    CrossbarArray x(DeviceConfig{}, FaultMap(3, 3), WeightScale{});
    RngStream rng(2, "write");
    x.program_once(Tensor({3, 3}, 0.2), rng);
    const auto before = x.conductances();
    for (int i = 0; i < 10; ++i) x.read_mvm(Tensor({3}, 1.0));
    EXPECT_EQ(before, x.conductances());
}

TEST(Crossbar, StuckCellsReadStuckValues) {
    DeviceConfig cfg;
    FaultMap fm(1, 3, {FaultCode::SF1, FaultCode::SF0, FaultCode::None});
    CrossbarArray x(cfg, fm, WeightScale::symmetric(1.0));
    RngStream rng(3, "write");
    x.program_rvw(Tensor({1, 3}, 0.1), RvwConfig{}, rng);
    EXPECT_DOUBLE_EQ(x.conductance(0, 0), cfg.g_off);
    EXPECT_DOUBLE_EQ(x.conductance(0, 1), cfg.g_on);
    EXPECT_NEAR(x.effective_weights()[0], -1.0, 1e-12);
    EXPECT_NEAR(x.effective_weights()[1], 1.0, 1e-12);
}

TEST(Crossbar, RvwPulseCountMatchesGeometricOracle) {
    const DeviceConfig cfg = [] {
        DeviceConfig c;
        c.sf0_rate = 0.0;
        c.sf1_rate = 0.0;
        return c;
    }();
    RvwConfig rvw;
    const double q = stats::normal_mass(std::log(1.0 - rvw.tolerance) / cfg.sigma_write,
                                        std::log(1.0 + rvw.tolerance) / cfg.sigma_write);
    const double expected = stats::truncated_geometric_mean(q, rvw.max_pulses_per_cell);
    RngStream wr(9, "w");
    // Targets kept away from the conductance limits so clamping never helps.
    const Tensor w = uniform_weights(100, 100, -0.5, 0.5, wr);
    CrossbarArray x(cfg, FaultMap(100, 100), WeightScale::symmetric(1.0));
    RngStream rng(9, "write");
    const auto report = x.program_rvw(w, rvw, rng);
    const double mean = static_cast<double>(report.pulses_total) / w.size();
    EXPECT_NEAR(mean, expected, 0.1 * expected);
    EXPECT_EQ(report.cells_converged + report.cells_failed, w.size());
    EXPECT_EQ(x.write_pulse_count(), report.pulses_total);
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (report.pulses_per_cell[k] < static_cast<std::uint32_t>(rvw.max_pulses_per_cell)) {
            const double target =
                weight_to_conductance(quantize_weight(w[k], x.scale(), cfg.num_levels).value, x.scale(), cfg);
            EXPECT_LE(std::abs(target / x.conductances()[k] - 1.0), rvw.tolerance + 1e-12);
        }
    }
}

TEST(Crossbar, RvwStuckCellsExhaustBudget) {
    DeviceConfig cfg;
    FaultMap fm(1, 2, {FaultCode::SF1, FaultCode::None});
    CrossbarArray x(cfg, fm, WeightScale::symmetric(1.0));
    RngStream rng(4, "write");
    RvwConfig rvw;
    rvw.max_pulses_per_cell = 200;
    const auto r = x.program_rvw(Tensor({1, 2}, 0.0), rvw, rng);
    EXPECT_EQ(r.pulses_per_cell[0], 200u);
    EXPECT_LT(r.pulses_per_cell[1], 200u);
    EXPECT_EQ(r.cells_failed, 1u);
    std::ostringstream out;
    r.write_pulse_histogram(out);
    EXPECT_EQ(out.str().rfind("pulses,cells\n", 0), 0u);
}

TEST(Crossbar, CostModel) {
    const TimingModel t;
    const auto c = cost_of(10, 1000, t);
    EXPECT_DOUBLE_EQ(c.write_seconds, 10 * t.t_write);
    EXPECT_DOUBLE_EQ(c.read_seconds, 1000 * t.t_read);
    EXPECT_DOUBLE_EQ(c.total, c.write_seconds + c.read_seconds);
}
