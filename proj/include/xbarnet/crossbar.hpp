#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "xbarnet/device.hpp"
#include "xbarnet/rng.hpp"
#include "xbarnet/tensor.hpp"

namespace xbarnet {

/// Read-verify-write programming parameters.
struct RvwConfig {
    /// Accept a pulse when |R - R_target| / R_target <= tolerance.
    double tolerance = 0.02;
    int max_pulses_per_cell = 100;

    void validate() const;
};

/// Device time per operation. Only ratios matter for the speedup metric.
struct TimingModel {
    double t_read = 1e-8;   // seconds per read operation
    double t_write = 1e-6;  // seconds per write pulse
};

struct RvwReport {
    std::uint64_t pulses_total = 0;
    std::uint64_t reads_total = 0;
    std::uint64_t cells_converged = 0;
    std::uint64_t cells_failed = 0;
    std::vector<std::uint32_t> pulses_per_cell;

    /// CSV "pulses,cells": number of cells that used each pulse count.
    void write_pulse_histogram(std::ostream& out) const;
    void merge(const RvwReport& other);
};

struct CostReport {
    double write_seconds = 0.0;
    double read_seconds = 0.0;
    double total = 0.0;
};

/// Programmed M x N RRAM array.
///
/// Conductances stay within [g_off, g_on] and faulted cells always hold
/// their stuck value. The write-pulse and read counters only grow. Reading
/// is allowed once the array has been programmed.
class CrossbarArray {
public:
    CrossbarArray(DeviceConfig cfg, FaultMap faults, WeightScale scale);

    std::size_t rows() const noexcept { return faults_.rows(); }
    std::size_t cols() const noexcept { return faults_.cols(); }
    const DeviceConfig& config() const noexcept { return cfg_; }
    const FaultMap& faults() const noexcept { return faults_; }
    const WeightScale& scale() const noexcept { return scale_; }
    bool programmed() const noexcept { return programmed_; }

    double conductance(std::size_t row, std::size_t col) const { return conductance_[row * cols() + col]; }
    const std::vector<double>& conductances() const noexcept { return conductance_; }

    std::uint64_t write_pulse_count() const noexcept { return write_pulses_; }
    std::uint64_t read_count() const noexcept { return reads_; }

    /// Conductances mapped back to weight space, [rows, cols].
    const Tensor& effective_weights() const;

    /// One write pulse per cell through the device model.
    void program_once(const Tensor& weights, RngStream& rng);

    /// Per cell: pulse, read, and stop once within tolerance or when the
    /// budget runs out. Stuck cells cannot converge and consume the whole
    /// budget.
    RvwReport program_rvw(const Tensor& weights, const RvwConfig& rvw, RngStream& rng);

    /// y_j = sum_i x_i w_eff[i][j] for x of shape [rows] or [batch, rows].
    /// Counts one read per input vector; conductances are untouched.
    Tensor read_mvm(const Tensor& x);

    /// Accounts for reads performed through a fused path (hybrid layers).
    void record_reads(std::uint64_t n) noexcept { reads_ += n; }

private:
    void check_shape(const Tensor& weights) const;
    void refresh_weights();

    DeviceConfig cfg_;
    FaultMap faults_;
    WeightScale scale_;
    std::vector<double> conductance_;
    Tensor weights_;
    std::uint64_t write_pulses_ = 0;
    std::uint64_t reads_ = 0;
    bool programmed_ = false;
};

CostReport cost_report(const CrossbarArray& xbar, const TimingModel& timing);
/// Cost of explicit counter deltas under the same timing model.
CostReport cost_of(std::uint64_t write_pulses, std::uint64_t reads, const TimingModel& timing);

}  // namespace xbarnet
