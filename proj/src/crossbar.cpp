#include "xbarnet/crossbar.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "linalg.hpp"

namespace xbarnet {

void RvwConfig::validate() const {
    if (!(tolerance > 0.0) || max_pulses_per_cell < 1) {
        throw std::invalid_argument(
            fmt::format("invalid R-V-W config: tolerance={} max_pulses={}", tolerance, max_pulses_per_cell));
    }
}

void RvwReport::write_pulse_histogram(std::ostream& out) const {
    std::map<std::uint32_t, std::uint64_t> counts;
    for (auto p : pulses_per_cell) {
        ++counts[p];
    }
    out << "pulses,cells\n";
    for (const auto& [pulses, cells] : counts) {
        out << pulses << ',' << cells << '\n';
    }
}

void RvwReport::merge(const RvwReport& other) {
    pulses_total += other.pulses_total;
    reads_total += other.reads_total;
    cells_converged += other.cells_converged;
    cells_failed += other.cells_failed;
    pulses_per_cell.insert(pulses_per_cell.end(), other.pulses_per_cell.begin(), other.pulses_per_cell.end());
}

CrossbarArray::CrossbarArray(DeviceConfig cfg, FaultMap faults, WeightScale scale)
    : cfg_(std::move(cfg)), faults_(std::move(faults)), scale_(scale), conductance_(faults_.size(), cfg_.g_off) {
    cfg_.validate();
    scale_.validate();
    for (std::size_t k = 0; k < conductance_.size(); ++k) {
        if (faults_[k] != FaultCode::None) {
            conductance_[k] = fault_conductance(faults_[k], cfg_);
        }
    }
    refresh_weights();
}

const Tensor& CrossbarArray::effective_weights() const {
    return weights_;
}

void CrossbarArray::check_shape(const Tensor& weights) const {
    if (weights.rank() != 2 || weights.dim(0) != rows() || weights.dim(1) != cols()) {
        throw DimensionError(
            fmt::format("weights {} do not fit a {}x{} crossbar", shape_string(weights.shape()), rows(), cols()));
    }
}

void CrossbarArray::refresh_weights() {
    weights_ = Tensor({rows(), cols()});
    for (std::size_t k = 0; k < conductance_.size(); ++k) {
        weights_[k] = conductance_to_weight(conductance_[k], scale_, cfg_);
    }
}

void CrossbarArray::program_once(const Tensor& weights, RngStream& rng) {
    check_shape(weights);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double target =
            weight_to_conductance(quantize_weight(weights[k], scale_, cfg_.num_levels).value, scale_, cfg_);
        const double g = sample_write(target, cfg_, rng);
        conductance_[k] = faults_[k] == FaultCode::None ? g : fault_conductance(faults_[k], cfg_);
    }
    write_pulses_ += weights.size();
    programmed_ = true;
    refresh_weights();
}

RvwReport CrossbarArray::program_rvw(const Tensor& weights, const RvwConfig& rvw, RngStream& rng) {
    check_shape(weights);
    rvw.validate();
    RvwReport report;
    report.pulses_per_cell.resize(weights.size());
    const auto budget = static_cast<std::uint32_t>(rvw.max_pulses_per_cell);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double target =
            weight_to_conductance(quantize_weight(weights[k], scale_, cfg_.num_levels).value, scale_, cfg_);
        std::uint32_t pulses = 0;
        bool converged = false;
        if (faults_[k] != FaultCode::None) {
            pulses = budget;
            conductance_[k] = fault_conductance(faults_[k], cfg_);
        } else {
            while (pulses < budget && !converged) {
                conductance_[k] = sample_write(target, cfg_, rng);
                ++pulses;
                // |R - R_t| / R_t with R = 1/g
                converged = std::abs(target / conductance_[k] - 1.0) <= rvw.tolerance;
            }
        }
        report.pulses_per_cell[k] = pulses;
        report.pulses_total += pulses;
        report.reads_total += pulses;
        if (converged) {
            ++report.cells_converged;
        } else {
            ++report.cells_failed;
        }
    }
    write_pulses_ += report.pulses_total;
    reads_ += report.reads_total;
    programmed_ = true;
    refresh_weights();
    return report;
}

Tensor CrossbarArray::read_mvm(const Tensor& x) {
    if (!programmed_) {
        throw std::logic_error("crossbar must be programmed before it can be read");
    }
    const bool single = x.rank() == 1;
    if (x.empty() || (single && x.dim(0) != rows()) || (!single && (x.rank() != 2 || x.dim(1) != rows()))) {
        throw DimensionError(fmt::format("input {} does not match {} crossbar rows", shape_string(x.shape()), rows()));
    }
    Tensor y = detail::affine(x, weights_, nullptr);
    const std::size_t batch = single ? 1 : x.dim(0);
    reads_ += batch;
    if (single) {
        y.reshape({cols()});
    }
    return y;
}

CostReport cost_of(std::uint64_t write_pulses, std::uint64_t reads, const TimingModel& timing) {
    CostReport c;
    c.write_seconds = static_cast<double>(write_pulses) * timing.t_write;
    c.read_seconds = static_cast<double>(reads) * timing.t_read;
    c.total = c.write_seconds + c.read_seconds;
    return c;
}

CostReport cost_report(const CrossbarArray& xbar, const TimingModel& timing) {
    return cost_of(xbar.write_pulse_count(), xbar.read_count(), timing);
}

}  // namespace xbarnet
