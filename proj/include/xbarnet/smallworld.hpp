#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "xbarnet/data.hpp"
#include "xbarnet/nn.hpp"
#include "xbarnet/rng.hpp"
#include "xbarnet/tensor.hpp"

namespace xbarnet {

struct SmallWorldConfig {
    double theta = 0.5;        // fraction of surviving weights removed per prune
    double p = 0.0001;         // random shortcut probability
    std::size_t window = 1024;  // largest band half-width for initial masks
    double target_density = 1.0;

    void validate() const;
};

/// Band-plus-shortcut sparsity mask for a [rows, cols] weight.
///
/// Input units are groups of `rows_per_unit` consecutive rows (k*k for a
/// convolution). Output unit j is centred on input unit
/// floor((j + 0.5) * units / cols) and connected to every input unit
/// within half-width h, where h is the smallest value <= cfg.window whose
/// band density reaches cfg.target_density. Each edge outside the band is
/// then added independently with probability cfg.p. Throws
/// std::invalid_argument when no h <= window reaches the target.
Mask build_initial_mask(std::size_t rows, std::size_t cols, const SmallWorldConfig& cfg, RngStream& rng,
                        std::size_t rows_per_unit = 1);

/// Band half-width build_initial_mask would use (exposed for tests).
std::size_t band_half_width(std::size_t units, std::size_t cols, const SmallWorldConfig& cfg);

/// Which classes each unit can reach through nonzero, unmasked weights.
///
/// A dense layer's units are its input neurons; a convolution's units are
/// its output channels. Entries follow net.weight_layers() order.
class ContributionGraph {
public:
    struct LayerReach {
        std::size_t layer = 0;  // network layer index
        std::size_t units = 0;
        std::vector<std::uint64_t> bits;  // units x words
    };

    ContributionGraph(std::size_t classes, std::vector<LayerReach> layers);

    std::size_t classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return layers_.size(); }
    const LayerReach& layer(std::size_t k) const { return layers_.at(k); }
    std::size_t units(std::size_t k) const { return layers_.at(k).units; }

    bool reaches(std::size_t k, std::size_t unit, std::size_t cls) const;
    std::size_t classes_reached(std::size_t k, std::size_t unit) const;
    std::size_t edge_count(std::size_t k) const;  // total (unit, class) pairs

private:
    std::size_t classes_;
    std::size_t words_;
    std::vector<LayerReach> layers_;
};

/// Backward reachability from every class output. An edge exists when its
/// sparsity bit is 1 and the weight is nonzero; a convolution edge between
/// two channels exists when any of its kernel entries does.
ContributionGraph contribution_reachability(const Network& net);

/// Mean over classes of the number of layer-k units reaching the class.
double metric_L(const ContributionGraph& graph, std::size_t k);
/// Mean over layer-k units of the number of classes the unit reaches.
double metric_C(const ContributionGraph& graph, std::size_t k);

struct LayerPruneStats {
    std::size_t layer = 0;
    std::size_t before = 0;  // surviving weights
    std::size_t after = 0;
    std::size_t shortcuts = 0;  // below-threshold weights kept at random
    double density_before = 0.0;
    double density_after = 0.0;
    double L_before = 0.0;
    double C_before = 0.0;
    double L_after = 0.0;
    double C_after = 0.0;
};

struct PruneReport {
    std::vector<LayerPruneStats> layers;
};

/// Per weight layer k: keeps the ceil((1 - theta[k]) * n) largest-magnitude
/// surviving weights (ties broken by position) and drops the rest, except
/// that each dropped weight is independently kept with probability p.
PruneReport prune_threshold(Network& net, std::span<const double> theta, double p, RngStream& rng);
PruneReport prune_threshold(Network& net, double theta, double p, RngStream& rng);

struct PruneRound {
    std::vector<double> density;  // target density per weight layer after the prune
    std::size_t finetune_epochs = 2;
};

struct SmallWorldSchedule {
    std::vector<double> initial_density;  // per weight layer
    std::size_t initial_epochs = 10;
    std::vector<PruneRound> rounds;

    /// Densities interpolated geometrically from `initial` to `final` over
    /// `rounds` prunes.
    static SmallWorldSchedule geometric(std::vector<double> initial, const std::vector<double>& final,
                                        std::size_t rounds, std::size_t initial_epochs,
                                        std::size_t finetune_epochs);
    void validate(std::size_t weight_layers) const;
};

struct MetricsRow {
    std::size_t round = 0;
    std::size_t layer = 0;  // weight-layer ordinal
    double theta = 0.0;     // sparsity of the layer, 1 - density
    double density = 0.0;
    double L = 0.0;
    double C = 0.0;
    double accuracy = 0.0;
};

struct SmallWorldResult {
    Network network;
    std::vector<MetricsRow> trace;
    std::vector<PruneReport> prunes;
    double accuracy = 0.0;  // on `eval` after the last round
    std::size_t parameters = 0;
    std::size_t dense_parameters = 0;

    double reduction() const;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

/// build_initial_mask -> train -> {prune_threshold -> fine-tune} per round.
/// Streams: "sw-mask" for initial masks, "sw-shortcut" for prune
/// shortcuts, "shuffle" for batches.
SmallWorldResult smallworld_pipeline(Network net, const Dataset& train, const Dataset& eval,
                                     const SmallWorldConfig& cfg, const SmallWorldSchedule& schedule,
                                     const SgdConfig& sgd, std::uint64_t seed);

}  // namespace xbarnet
