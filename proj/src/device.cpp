#include "xbarnet/device.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace xbarnet {

void DeviceConfig::validate() const {
    if (num_levels < 2) {
        throw std::invalid_argument(fmt::format("num_levels must be >= 2, got {}", num_levels));
    }
    if (!(g_off > 0.0) || !(g_off < g_on)) {
        throw std::invalid_argument(fmt::format("need 0 < g_off < g_on, got g_off={} g_on={}", g_off, g_on));
    }
    if (!(sigma_write >= 0.0)) {
        throw std::invalid_argument(fmt::format("sigma_write must be >= 0, got {}", sigma_write));
    }
    if (!(sf1_rate >= 0.0 && sf0_rate >= 0.0 && sf1_rate + sf0_rate <= 1.0)) {
        throw std::invalid_argument(fmt::format("invalid stuck-at rates sf1={} sf0={}", sf1_rate, sf0_rate));
    }
}

const char* fault_name(FaultCode code) {
    switch (code) {
        case FaultCode::SF1:
            return "SF1";
        case FaultCode::SF0:
            return "SF0";
        case FaultCode::None:
            break;
    }
    return "None";
}

FaultMap::FaultMap(std::size_t rows, std::size_t cols, FaultCode fill)
    : rows_(rows), cols_(cols), codes_(rows * cols, fill) {}

FaultMap::FaultMap(std::size_t rows, std::size_t cols, std::vector<FaultCode> codes)
    : rows_(rows), cols_(cols), codes_(std::move(codes)) {
    if (codes_.size() != rows * cols) {
        throw DimensionError(fmt::format("fault map {}x{} needs {} codes, got {}", rows, cols, rows * cols,
                                         codes_.size()));
    }
}

std::size_t FaultMap::count(FaultCode code) const {
    return static_cast<std::size_t>(std::count(codes_.begin(), codes_.end(), code));
}

void FaultMap::write_csv(std::ostream& out) const {
    out << "row,col,code\n";
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            const auto code = at(r, c);
            if (code != FaultCode::None) {
                out << r << ',' << c << ',' << fault_name(code) << '\n';
            }
        }
    }
}

WeightScale WeightScale::symmetric(double max_abs) {
    if (!(max_abs > 0.0)) {
        max_abs = 1.0;
    }
    return {-max_abs, max_abs};
}

WeightScale WeightScale::from_weights(const Tensor& weights, bool symmetric) {
    double lo = 0.0;
    double hi = 0.0;
    for (double w : weights.data()) {
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    if (symmetric) {
        return WeightScale::symmetric(std::max(-lo, hi));
    }
    if (!(lo < hi)) {
        return {lo - 1.0, hi + 1.0};
    }
    return {lo, hi};
}

void WeightScale::validate() const {
    if (!(w_min < w_max)) {
        throw std::invalid_argument(fmt::format("weight scale needs w_min < w_max, got [{}, {}]", w_min, w_max));
    }
}

QuantizedWeight quantize_weight(double w, const WeightScale& scale, int num_levels) {
    if (num_levels < 2) {
        throw std::invalid_argument(fmt::format("num_levels must be >= 2, got {}", num_levels));
    }
    const double step = (scale.w_max - scale.w_min) / static_cast<double>(num_levels - 1);
    const double clamped = std::clamp(w, scale.w_min, scale.w_max);
    const double t = (clamped - scale.w_min) / step;
    const int level = std::clamp(static_cast<int>(std::ceil(t - 0.5)), 0, num_levels - 1);
    const double value = level == num_levels - 1 ? scale.w_max : scale.w_min + step * level;
    return {level, value};
}

double weight_to_conductance(double w, const WeightScale& scale, const DeviceConfig& cfg) {
    return cfg.g_off + (w - scale.w_min) / (scale.w_max - scale.w_min) * (cfg.g_on - cfg.g_off);
}

double conductance_to_weight(double g, const WeightScale& scale, const DeviceConfig& cfg) {
    return scale.w_min + (g - cfg.g_off) / (cfg.g_on - cfg.g_off) * (scale.w_max - scale.w_min);
}

double write_with_deviate(double g_target, double xi, const DeviceConfig& cfg) {
    if (cfg.sigma_write == 0.0) {
        return g_target;
    }
    const double resistance = std::exp(cfg.sigma_write * xi) / g_target;
    return std::clamp(1.0 / resistance, cfg.g_off, cfg.g_on);
}

double sample_write(double g_target, const DeviceConfig& cfg, RngStream& rng) {
    return write_with_deviate(g_target, rng.normal(), cfg);
}

FaultMap inject_faults(std::size_t rows, std::size_t cols, const DeviceConfig& cfg, RngStream& rng) {
    cfg.validate();
    std::vector<FaultCode> codes(rows * cols, FaultCode::None);
    for (auto& code : codes) {
        const double u = rng.uniform();
        if (u < cfg.sf1_rate) {
            code = FaultCode::SF1;
        } else if (u < cfg.sf1_rate + cfg.sf0_rate) {
            code = FaultCode::SF0;
        }
    }
    return FaultMap(rows, cols, std::move(codes));
}

double fault_conductance(FaultCode code, const DeviceConfig& cfg) {
    return code == FaultCode::SF1 ? cfg.g_off : cfg.g_on;
}

double WeightHistogram::bin_center(std::size_t bin) const {
    const double width = (hi - lo) / static_cast<double>(pre.size());
    return lo + (static_cast<double>(bin) + 0.5) * width;
}

void WeightHistogram::accumulate(const WeightHistogram& other) {
    if (pre.size() != other.pre.size() || lo != other.lo || hi != other.hi) {
        throw std::invalid_argument("cannot merge histograms with different bin grids");
    }
    for (std::size_t b = 0; b < pre.size(); ++b) {
        pre[b] += other.pre[b];
        post[b] += other.post[b];
    }
}

WeightHistogram make_histogram(const Tensor& before, const Tensor& after, std::size_t bins) {
    WeightHistogram h;
    h.pre.assign(bins, 0);
    h.post.assign(bins, 0);
    if (before.empty() && after.empty()) {
        h.hi = 1.0;
        return h;
    }
    const auto [bmin, bmax] = std::minmax_element(before.data().begin(), before.data().end());
    const auto [amin, amax] = std::minmax_element(after.data().begin(), after.data().end());
    h.lo = std::min(*bmin, *amin);
    h.hi = std::max(*bmax, *amax);
    if (!(h.lo < h.hi)) {
        h.lo -= 0.5;
        h.hi += 0.5;
    }
    auto bin_of = [&](double v) {
        const auto b = static_cast<std::size_t>((v - h.lo) / (h.hi - h.lo) * static_cast<double>(bins));
        return std::min(b, bins - 1);
    };
    for (double v : before.data()) {
        ++h.pre[bin_of(v)];
    }
    for (double v : after.data()) {
        ++h.post[bin_of(v)];
    }
    return h;
}

EffectiveWeights effective_weight_matrix(const Tensor& weights, const WeightScale& scale, const DeviceConfig& cfg,
                                         const FaultMap& faults, RngStream& rng, std::size_t bins) {
    cfg.validate();
    scale.validate();
    if (weights.rank() != 2 || faults.rows() != weights.dim(0) || faults.cols() != weights.dim(1)) {
        throw DimensionError(fmt::format("weights {} vs fault map {}x{}", shape_string(weights.shape()), faults.rows(),
                                         faults.cols()));
    }
    EffectiveWeights out{Tensor(weights.shape()), {}};
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double target = weight_to_conductance(quantize_weight(weights[k], scale, cfg.num_levels).value, scale, cfg);
        double g = sample_write(target, cfg, rng);
        if (faults[k] != FaultCode::None) {
            g = fault_conductance(faults[k], cfg);
        }
        out.weights[k] = conductance_to_weight(g, scale, cfg);
    }
    out.histogram = make_histogram(weights, out.weights, bins);
    return out;
}

}  // namespace xbarnet
