#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "xbarnet/crossbar.hpp"
#include "xbarnet/data.hpp"
#include "xbarnet/device.hpp"
#include "xbarnet/nn.hpp"
#include "xbarnet/rng.hpp"

namespace xbarnet {

// ---------------------------------------------------------------------------
// Cell selection
// ---------------------------------------------------------------------------

/// Row/column-regular set of selected crossbar cells.
///
/// Every row holds exactly `per_row` cells and column counts differ by at
/// most one. Cell k of the compact store lives at row k / per_row, column
/// columns()[k], so the overlay values pack into a dense rows x per_row
/// block.
class RsaSelection {
public:
    RsaSelection() = default;
    RsaSelection(std::size_t rows, std::size_t cols, std::size_t per_row, std::vector<std::uint32_t> columns);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t per_row() const noexcept { return per_row_; }
    std::size_t size() const noexcept { return columns_.size(); }

    std::span<const std::uint32_t> columns() const noexcept { return columns_; }
    std::span<const std::uint32_t> row_columns(std::size_t row) const;
    std::pair<std::size_t, std::size_t> cell(std::size_t k) const { return {k / per_row_, columns_[k]}; }
    std::optional<std::size_t> compact_index(std::size_t row, std::size_t col) const;
    bool contains(std::size_t row, std::size_t col) const { return compact_index(row, col).has_value(); }

    std::vector<std::size_t> column_counts() const;
    Mask to_mask() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t per_row_ = 0;
    std::vector<std::uint32_t> columns_;
};

/// round(fraction * cols); throws std::invalid_argument when the result
/// is 0 or exceeds cols.
std::size_t rsa_per_row(std::size_t cols, double fraction);

/// Random regular selection: the rows * r column labels are drawn as
/// consecutive random permutations of the columns (which fixes the column
/// counts), then dealt round-robin to the rows with duplicates repaired by
/// swapping labels. A construction dead end retries on a perturbed stream.
RsaSelection select_cells(std::size_t rows, std::size_t cols, double fraction, RngStream& rng);
RsaSelection select_cells_per_row(std::size_t rows, std::size_t cols, std::size_t per_row, RngStream& rng);

/// Values of a dense rows x cols matrix at the selected cells, in compact
/// order.
std::vector<double> gather_selected(const RsaSelection& selection, const Tensor& dense);

// ---------------------------------------------------------------------------
// Hybrid crossbar + overlay layer
// ---------------------------------------------------------------------------

/// Frozen crossbar plus a full-precision trainable overlay on the selected
/// cells. Effective weight = crossbar weight + overlay value on selected
/// cells, crossbar weight elsewhere.
class HybridLayer {
public:
    HybridLayer(CrossbarArray xbar, RsaSelection selection, double init_sigma, RngStream& init);
    HybridLayer(CrossbarArray xbar, RsaSelection selection, std::vector<double> values);

    const CrossbarArray& crossbar() const noexcept { return xbar_; }
    CrossbarArray& crossbar() noexcept { return xbar_; }
    const RsaSelection& selection() const noexcept { return selection_; }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    /// Crossbar weights with the overlay scattered on top.
    Tensor combined_weights() const;

private:
    CrossbarArray xbar_;
    RsaSelection selection_;
    std::vector<double> values_;
};

/// Pre-activation output of the hybrid layer for x of shape [rows] or
/// [batch, rows]. Counts one crossbar read per input vector.
Tensor hybrid_forward(HybridLayer& layer, const Tensor& x);

/// Gradient with respect to the overlay values only: the dense weight
/// gradient x^T g gathered at the selected cells. Never touches the
/// crossbar.
std::vector<double> rsa_backward(const HybridLayer& layer, const Tensor& upstream_grad, const Tensor& x);

// ---------------------------------------------------------------------------
// Networks on crossbars
// ---------------------------------------------------------------------------

struct RsaConfig {
    double fraction = 0.05;
    double init_sigma = 0.01;
    SgdConfig optimizer{0.1, 0.9, 32, 5};

    void validate() const;
};

/// A trained network whose weight layers have been written to crossbars.
/// `network` carries the effective (read-back) weights plus the
/// off-crossbar biases.
struct CrossbarModel {
    Network network;
    std::vector<std::size_t> mapped_layers;
    std::vector<CrossbarArray> arrays;
    WeightHistogram histogram;  // all mapped weights before/after programming

    std::uint64_t write_pulses() const;
    std::uint64_t reads() const;
    /// Copies each array's effective weights into `network`.
    void sync_weights();
};

/// Samples a fault map per weight layer (stream `faults`) and programs it
/// once (stream `writes`) using a symmetric +-max|w| scale per layer.
CrossbarModel program_network(const Network& trained, const DeviceConfig& cfg, RngStream& faults, RngStream& writes);

/// Crossbar model with an overlay on every mapped layer. Crossbar weights
/// are frozen in `network`; only overlays and biases adapt.
struct RsaModel {
    Network network;
    std::vector<std::size_t> mapped_layers;
    std::vector<HybridLayer> layers;

    std::uint64_t write_pulses() const;
    std::uint64_t reads() const;
    void sync_weights();
    /// Network with crossbar weights only (overlays ignored).
    Network crossbar_only() const;
};

/// Per layer the overlay uses max(1, round(fraction * cols)) cells per row,
/// so narrow output layers keep at least one adaptable cell per row.
RsaModel attach_rsa(CrossbarModel model, const RsaConfig& cfg, RngStream& select, RngStream& init);

struct AdaptationPoint {
    std::size_t epoch = 0;
    double accuracy = 0.0;
    double modeled_seconds = 0.0;  // cumulative device time
};

struct AdaptationTrace {
    std::vector<AdaptationPoint> points;  // points[0] is the crossbar-only model
    std::uint64_t reads = 0;
    std::uint64_t write_pulses = 0;
    double modeled_seconds = 0.0;

    double final_accuracy() const { return points.back().accuracy; }
};

/// Trains the overlays (and biases) for cfg.optimizer.epochs epochs. The
/// crossbars are only read; throws std::logic_error if any write pulse is
/// recorded during adaptation.
AdaptationTrace adapt(RsaModel& model, const Dataset& train, const Dataset& eval, const RsaConfig& cfg,
                      const TimingModel& timing, RngStream& shuffle);

struct CompareScenario {
    DeviceConfig device;
    RvwConfig rvw;
    RsaConfig rsa;
    TimingModel timing;
    std::uint64_t seed = 1;
};

struct CompareResult {
    double ideal_accuracy = 0.0;
    double faulted_accuracy = 0.0;
    double rsa_accuracy = 0.0;
    double rvw_accuracy = 0.0;
    double rsa_seconds = 0.0;
    double rvw_seconds = 0.0;
    double speedup = 0.0;
    std::uint64_t rsa_write_pulses = 0;
    std::size_t rsa_cells = 0;
    RvwReport rvw_report;
    AdaptationTrace rsa_trace;
    WeightHistogram histogram;

    /// (rsa - faulted) / (ideal - faulted); 1 when there was no gap.
    double recovered_fraction() const;
};

/// Programs `trained` once onto faulty crossbars, then runs two arms from
/// that same state: R-V-W reprogramming of every array, and RSA
/// adaptation. Times are device write/read time of each arm only.
CompareResult compare_rsa_vs_rvw(const Network& trained, const Dataset& train, const Dataset& test,
                                 const CompareScenario& scenario);

}  // namespace xbarnet
