#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "xbarnet/rng.hpp"
#include "xbarnet/tensor.hpp"

namespace xbarnet {

/// Non-ideal RRAM cell population.
struct DeviceConfig {
    int num_levels = 32;
    double g_on = 1e-4;   // low-resistance state conductance (S)
    double g_off = 1e-6;  // high-resistance state conductance (S)
    double sigma_write = 0.1;  // std-dev of ln R per write
    double sf1_rate = 0.0904;  // stuck at high resistance
    double sf0_rate = 0.0175;  // stuck at low resistance
    std::string rng_label = "write";

    void validate() const;
};

enum class FaultCode : std::uint8_t { None = 0, SF1 = 1, SF0 = 2 };

const char* fault_name(FaultCode code);

/// Per-cell stuck-at assignment for one array. Sampled once, then fixed.
class FaultMap {
public:
    FaultMap() = default;
    FaultMap(std::size_t rows, std::size_t cols, FaultCode fill = FaultCode::None);
    FaultMap(std::size_t rows, std::size_t cols, std::vector<FaultCode> codes);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    FaultCode at(std::size_t row, std::size_t col) const { return codes_[row * cols_ + col]; }
    FaultCode operator[](std::size_t i) const { return codes_[i]; }
    std::size_t count(FaultCode code) const;
    std::size_t size() const noexcept { return codes_.size(); }

    /// CSV with header "row,col,code"; only faulted cells are listed.
    void write_csv(std::ostream& out) const;

    friend bool operator==(const FaultMap&, const FaultMap&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<FaultCode> codes_;
};

/// Weight range mapped linearly onto [g_off, g_on].
struct WeightScale {
    double w_min = -1.0;
    double w_max = 1.0;

    static WeightScale symmetric(double max_abs);
    /// Symmetric range +-max|w| (or the raw [min, max] when `symmetric` is
    /// false). A degenerate range is widened so that w_min < w_max.
    static WeightScale from_weights(const Tensor& weights, bool symmetric = true);
    void validate() const;
};

struct QuantizedWeight {
    int level = 0;
    double value = 0.0;
};

/// Nearest of `num_levels` uniformly spaced levels spanning the scale.
/// Inputs outside the range clamp to the endpoints; exact midpoints round
/// to the lower level.
QuantizedWeight quantize_weight(double w, const WeightScale& scale, int num_levels);

/// Linear map w_min -> g_off, w_max -> g_on, and its inverse.
double weight_to_conductance(double w, const WeightScale& scale, const DeviceConfig& cfg);
double conductance_to_weight(double g, const WeightScale& scale, const DeviceConfig& cfg);

/// One programming pulse: R = exp(sigma * xi) / g_target with xi ~ N(0, 1)
/// drawn from `rng`; returns 1/R clamped to [g_off, g_on].
double sample_write(double g_target, const DeviceConfig& cfg, RngStream& rng);
/// Same pulse with the normal deviate supplied by the caller.
double write_with_deviate(double g_target, double xi, const DeviceConfig& cfg);

/// Each cell independently SF1 with probability sf1_rate, SF0 with
/// probability sf0_rate, otherwise healthy.
FaultMap inject_faults(std::size_t rows, std::size_t cols, const DeviceConfig& cfg, RngStream& rng);

/// Conductance a faulted cell always reads.
double fault_conductance(FaultCode code, const DeviceConfig& cfg);

/// Paired histograms over a shared bin grid.
struct WeightHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> pre;
    std::vector<std::size_t> post;

    double bin_center(std::size_t bin) const;
    void accumulate(const WeightHistogram& other);
};

WeightHistogram make_histogram(const Tensor& before, const Tensor& after, std::size_t bins = 64);

struct EffectiveWeights {
    Tensor weights;
    WeightHistogram histogram;
};

/// Quantise, map to conductance, apply one noisy write, override faulted
/// cells and map back. One normal deviate is drawn per cell (faulted or
/// not) so the write stream stays aligned with CrossbarArray programming.
EffectiveWeights effective_weight_matrix(const Tensor& weights, const WeightScale& scale, const DeviceConfig& cfg,
                                         const FaultMap& faults, RngStream& rng, std::size_t bins = 64);

}  // namespace xbarnet
