#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xbarnet/data.hpp"
#include "xbarnet/nn.hpp"
#include "xbarnet/rng.hpp"

namespace xbarnet {

struct CgapConfig {
    double seed_fraction = 0.05;
    std::size_t growth_period = 1;  // epochs between growth events
    double growth_rate = 1.0;  // units split per event = ceil(rate * width)
    double noise = 0.1;  // std-dev added to a child's incoming weights
    std::size_t peak_patience = 4;
    double peak_eps = 0.001;
    std::size_t max_growth_events = 40;
    double width_cap = 1.0;  // max width as a multiple of the baseline width
    double prune_rate = 0.1;
    double accuracy_budget = 0.003;
    std::size_t finetune_epochs = 2;
    std::size_t max_prune_steps = 30;
    std::size_t peak_epochs = 5;  // extra training once growth stops
    std::size_t saliency_batch = 1000;
    SgdConfig optimizer;
    double refine_learning_rate = 0.005;  // peak training and prune fine-tuning

    void validate() const;
};

/// Hidden units are the outputs of every weight layer but the last: dense
/// neurons or convolution output channels. Entry k describes weight layer
/// net.weight_layers()[k].
std::vector<std::size_t> hidden_widths(const Network& net);

/// Copy of `baseline` with hidden widths max(1, ceil(fraction * width)),
/// freshly He-initialised from `rng`.
Network build_seed(const Network& baseline, double fraction, RngStream& rng);

/// Per hidden layer: |sum over the batch of dLoss/da_u * a_u| with a the
/// post-ReLU activation and the loss a batch mean. For channels the product
/// is averaged over spatial positions first.
std::vector<std::vector<double>> unit_saliency(const Network& net, const Tensor& batch, std::span<const int> labels);

struct GrowthEvent {
    std::size_t epoch = 0;
    std::size_t layer = 0;  // hidden-layer ordinal
    std::size_t parent = 0;
    std::size_t child = 0;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
};

/// Splits the ceil(k * width) highest-saliency units of each hidden layer
/// (ties toward lower index). The child copies the parent's incoming
/// weights plus N(0, noise) and its bias; the parent's outgoing weights are
/// halved and shared with the child. Layers at `caps` are left alone.
/// New entries get zero optimizer momentum.
std::vector<GrowthEvent> grow(Network& net, const std::vector<std::vector<double>>& scores, double rate, double noise,
                              std::span<const std::size_t> caps, RngStream& rng, std::size_t epoch = 0);

/// Structured removal of the listed units of hidden layer k.
void remove_units(Network& net, std::size_t k, std::vector<std::size_t> units);

/// Incoming-weight L2 norm of each unit of hidden layer k.
std::vector<double> unit_norms(const Network& net, std::size_t k);

/// True once the best value has gone `patience` consecutive entries
/// without an improvement larger than `eps`.
bool detect_peak(std::span<const double> trace, std::size_t patience, double eps);

struct CgapTraceRow {
    std::string phase;  // "grow", "peak" or "prune"
    std::size_t epoch = 0;
    std::vector<std::size_t> widths;
    std::size_t parameters = 0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct PruneStep {
    std::vector<std::size_t> widths_before;
    std::vector<std::size_t> widths_after;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    double val_accuracy = 0.0;
    bool accepted = false;
};

struct CgapResult {
    Network network;
    std::vector<CgapTraceRow> trace;
    std::vector<GrowthEvent> growth;
    std::vector<PruneStep> prunes;
    std::vector<std::size_t> seed_widths;
    std::vector<std::size_t> peak_widths;
    std::vector<std::size_t> final_widths;
    std::size_t seed_parameters = 0;
    std::size_t peak_parameters = 0;
    std::size_t final_parameters = 0;
    double peak_val_accuracy = 0.0;
    double final_val_accuracy = 0.0;
};

/// Rank units by incoming norm, remove max(1, floor(q * width)) per layer,
/// fine-tune; repeat until a step would drop validation accuracy more than
/// cfg.accuracy_budget below `peak_accuracy`, in which case that step is
/// undone and pruning stops.
std::vector<PruneStep> prune_units(Network& net, const Dataset& train, const Dataset& val, const CgapConfig& cfg,
                                   double peak_accuracy, RngStream& shuffle, std::vector<CgapTraceRow>* trace = nullptr,
                                   std::size_t first_epoch = 0);

/// seed -> {train, saliency, grow} until the peak -> prune_units.
/// Streams: "init" for the seed, "cgap-noise" for children, "shuffle" for
/// batches and saliency samples.
CgapResult run_cgap(const Network& baseline, const Dataset& train, const Dataset& val, const CgapConfig& cfg,
                    std::uint64_t seed);

void write_cgap_trace_csv(std::ostream& out, const std::vector<CgapTraceRow>& rows);

}  // namespace xbarnet
