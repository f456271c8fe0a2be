#include "xbarnet/smallworld.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <variant>

#include <fmt/format.h>

namespace xbarnet {

void SmallWorldConfig::validate() const {
    if (!(theta >= 0.0 && theta < 1.0)) {
        throw std::invalid_argument(fmt::format("theta must be in [0, 1), got {}", theta));
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(fmt::format("shortcut probability must be in [0, 1], got {}", p));
    }
    if (!(target_density > 0.0 && target_density <= 1.0)) {
        throw std::invalid_argument(fmt::format("target density must be in (0, 1], got {}", target_density));
    }
}

namespace {

std::size_t band_center(std::size_t j, std::size_t units, std::size_t cols) {
    const auto c = static_cast<std::size_t>((static_cast<double>(j) + 0.5) * static_cast<double>(units) /
                                            static_cast<double>(cols));
    return std::min(c, units - 1);
}

std::pair<std::size_t, std::size_t> band_range(std::size_t center, std::size_t h, std::size_t units) {
    const std::size_t lo = center > h ? center - h : 0;
    const std::size_t hi = std::min(units - 1, center + h);
    return {lo, hi};
}

std::size_t band_cells(std::size_t units, std::size_t cols, std::size_t h) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < cols; ++j) {
        const auto [lo, hi] = band_range(band_center(j, units, cols), h, units);
        n += hi - lo + 1;
    }
    return n;
}

}  // namespace

std::size_t band_half_width(std::size_t units, std::size_t cols, const SmallWorldConfig& cfg) {
    cfg.validate();
    if (units == 0 || cols == 0) {
        throw DimensionError("band mask needs a non-empty layer");
    }
    const double total = static_cast<double>(units) * static_cast<double>(cols);
    // Band density is nondecreasing in h; binary search the smallest h.
    std::size_t lo = 0;
    std::size_t hi = std::min(cfg.window, units - 1);
    if (static_cast<double>(band_cells(units, cols, hi)) / total < cfg.target_density - 1e-12) {
        throw std::invalid_argument(fmt::format("density {} is not reachable with window {} on {} inputs",
                                                cfg.target_density, cfg.window, units));
    }
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (static_cast<double>(band_cells(units, cols, mid)) / total >= cfg.target_density - 1e-12) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return lo;
}

Mask build_initial_mask(std::size_t rows, std::size_t cols, const SmallWorldConfig& cfg, RngStream& rng,
                        std::size_t rows_per_unit) {
    if (rows_per_unit == 0 || rows % rows_per_unit != 0) {
        throw DimensionError(fmt::format("{} rows do not split into units of {}", rows, rows_per_unit));
    }
    const std::size_t units = rows / rows_per_unit;
    const std::size_t h = band_half_width(units, cols, cfg);
    Mask mask = Mask::zeros({rows, cols});
    for (std::size_t j = 0; j < cols; ++j) {
        const auto [lo, hi] = band_range(band_center(j, units, cols), h, units);
        for (std::size_t u = lo; u <= hi; ++u) {
            for (std::size_t s = 0; s < rows_per_unit; ++s) {
                mask.set(u * rows_per_unit + s, j, true);
            }
        }
    }
    if (cfg.p > 0.0) {
        // Row-major sweep so the stream consumption is independent of h.
        for (std::size_t i = 0; i < rows * cols; ++i) {
            const bool shortcut = rng.bernoulli(cfg.p);
            if (shortcut) {
                mask.set(i, true);
            }
        }
    }
    return mask;
}

ContributionGraph::ContributionGraph(std::size_t classes, std::vector<LayerReach> layers)
    : classes_(classes), words_((classes + 63) / 64), layers_(std::move(layers)) {
    for (const auto& l : layers_) {
        if (l.bits.size() != l.units * words_) {
            throw DimensionError("contribution bitsets do not match unit count");
        }
    }
}

bool ContributionGraph::reaches(std::size_t k, std::size_t unit, std::size_t cls) const {
    const auto& l = layers_.at(k);
    return (l.bits[unit * words_ + cls / 64] >> (cls % 64)) & 1U;
}

std::size_t ContributionGraph::classes_reached(std::size_t k, std::size_t unit) const {
    const auto& l = layers_.at(k);
    std::size_t n = 0;
    for (std::size_t w = 0; w < words_; ++w) {
        n += static_cast<std::size_t>(std::popcount(l.bits[unit * words_ + w]));
    }
    return n;
}

std::size_t ContributionGraph::edge_count(std::size_t k) const {
    std::size_t n = 0;
    for (auto w : layers_.at(k).bits) {
        n += static_cast<std::size_t>(std::popcount(w));
    }
    return n;
}

namespace {

using Bits = std::vector<std::uint64_t>;  // nodes x words

void or_into(Bits& dst, std::size_t d, const Bits& src, std::size_t s, std::size_t words) {
    for (std::size_t w = 0; w < words; ++w) {
        dst[d * words + w] |= src[s * words + w];
    }
}

}  // namespace

ContributionGraph contribution_reachability(const Network& net) {
    const auto wl = net.weight_layers();
    const std::size_t classes = net.num_classes();
    const std::size_t words = (classes + 63) / 64;
    if (wl.empty()) {
        return ContributionGraph(classes, {});
    }
    if (net.params(wl.back()).fan_out() != classes) {
        throw DimensionError("last weight layer must produce the class outputs");
    }

    // out_reach: classes reached by each output node of the current layer.
    Bits out_reach(classes * words, 0);
    for (std::size_t c = 0; c < classes; ++c) {
        out_reach[c * words + c / 64] |= std::uint64_t{1} << (c % 64);
    }
    std::vector<ContributionGraph::LayerReach> result(wl.size());

    for (std::size_t k = wl.size(); k-- > 0;) {
        const std::size_t li = wl[k];
        const auto& p = net.params(li);
        const std::size_t fan_out = p.fan_out();
        const auto* conv = std::get_if<Conv2d>(&net.layer(li));
        // Input nodes: neurons for dense layers, channels for convolutions.
        const std::size_t rows_per_node = conv != nullptr ? conv->kernel * conv->kernel : 1;
        const std::size_t in_nodes = p.fan_in() / rows_per_node;
        Bits in_reach(in_nodes * words, 0);
        for (std::size_t r = 0; r < p.fan_in(); ++r) {
            const std::size_t node = r / rows_per_node;
            for (std::size_t c = 0; c < fan_out; ++c) {
                const std::size_t idx = r * fan_out + c;
                if (p.sparsity[idx] && p.weight[idx] != 0.0) {
                    or_into(in_reach, node, out_reach, c, words);
                }
            }
        }
        if (conv != nullptr) {
            result[k] = {li, fan_out, out_reach};
        } else {
            result[k] = {li, in_nodes, in_reach};
        }
        if (k == 0) {
            break;
        }

        // Map this layer's input nodes onto the previous weight layer's
        // outputs (channels collapse flattened feature maps).
        const auto& prev = net.params(wl[k - 1]);
        const std::size_t prev_out = prev.fan_out();
        if (in_nodes == prev_out) {
            out_reach = std::move(in_reach);
        } else if (conv == nullptr && in_nodes % prev_out == 0 &&
                   std::holds_alternative<Conv2d>(net.layer(wl[k - 1]))) {
            const std::size_t per_channel = in_nodes / prev_out;
            Bits collapsed(prev_out * words, 0);
            for (std::size_t f = 0; f < in_nodes; ++f) {
                or_into(collapsed, f / per_channel, in_reach, f, words);
            }
            out_reach = std::move(collapsed);
        } else {
            throw DimensionError(fmt::format("cannot relate layer {} inputs ({}) to layer {} outputs ({})", li,
                                             in_nodes, wl[k - 1], prev_out));
        }
    }
    return ContributionGraph(classes, std::move(result));
}

double metric_L(const ContributionGraph& graph, std::size_t k) {
    if (graph.classes() == 0) {
        return 0.0;
    }
    return static_cast<double>(graph.edge_count(k)) / static_cast<double>(graph.classes());
}

double metric_C(const ContributionGraph& graph, std::size_t k) {
    if (graph.units(k) == 0) {
        return 0.0;
    }
    return static_cast<double>(graph.edge_count(k)) / static_cast<double>(graph.units(k));
}

PruneReport prune_threshold(Network& net, std::span<const double> theta, double p, RngStream& rng) {
    const auto wl = net.weight_layers();
    if (theta.size() != wl.size()) {
        throw std::invalid_argument(
            fmt::format("{} thresholds given for {} weight layers", theta.size(), wl.size()));
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(fmt::format("shortcut probability must be in [0, 1], got {}", p));
    }
    for (double t : theta) {
        if (!(t >= 0.0 && t < 1.0)) {
            throw std::invalid_argument(fmt::format("theta must be in [0, 1), got {}", t));
        }
    }

    PruneReport report;
    const auto before = contribution_reachability(net);
    for (std::size_t k = 0; k < wl.size(); ++k) {
        auto& blk = net.params(wl[k]);
        LayerPruneStats s;
        s.layer = wl[k];
        s.L_before = metric_L(before, k);
        s.C_before = metric_C(before, k);
        s.before = blk.sparsity.count();
        s.density_before = blk.sparsity.density();

        std::vector<std::size_t> alive;
        alive.reserve(s.before);
        for (std::size_t i = 0; i < blk.sparsity.size(); ++i) {
            if (blk.sparsity[i]) {
                alive.push_back(i);
            }
        }
        const double keep_real = (1.0 - theta[k]) * static_cast<double>(alive.size());
        const auto keep = std::min(alive.size(), static_cast<std::size_t>(std::ceil(keep_real - 1e-9)));
        // Largest magnitudes first; equal magnitudes keep the lower index.
        std::stable_sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(blk.weight[a]) > std::abs(blk.weight[b]);
        });
        Mask mask = blk.sparsity;
        std::vector<std::size_t> dropped(alive.begin() + static_cast<std::ptrdiff_t>(keep), alive.end());
        std::sort(dropped.begin(), dropped.end());
        for (std::size_t i : dropped) {
            if (rng.bernoulli(p)) {
                ++s.shortcuts;
            } else {
                mask.set(i, false);
            }
        }
        blk.set_sparsity(std::move(mask));
        s.after = blk.sparsity.count();
        s.density_after = blk.sparsity.density();
        report.layers.push_back(s);
    }
    const auto after = contribution_reachability(net);
    for (std::size_t k = 0; k < wl.size(); ++k) {
        report.layers[k].L_after = metric_L(after, k);
        report.layers[k].C_after = metric_C(after, k);
    }
    return report;
}

PruneReport prune_threshold(Network& net, double theta, double p, RngStream& rng) {
    const std::vector<double> all(net.weight_layers().size(), theta);
    return prune_threshold(net, all, p, rng);
}

SmallWorldSchedule SmallWorldSchedule::geometric(std::vector<double> initial, const std::vector<double>& final,
                                                 std::size_t rounds, std::size_t initial_epochs,
                                                 std::size_t finetune_epochs) {
    if (initial.size() != final.size()) {
        throw std::invalid_argument("initial and final density lists differ in length");
    }
    SmallWorldSchedule s;
    s.initial_epochs = initial_epochs;
    for (std::size_t r = 1; r <= rounds; ++r) {
        PruneRound round;
        round.finetune_epochs = finetune_epochs;
        const double t = static_cast<double>(r) / static_cast<double>(rounds);
        for (std::size_t k = 0; k < initial.size(); ++k) {
            round.density.push_back(initial[k] * std::pow(final[k] / initial[k], t));
        }
        s.rounds.push_back(std::move(round));
    }
    s.initial_density = std::move(initial);
    return s;
}

void SmallWorldSchedule::validate(std::size_t weight_layers) const {
    auto check = [&](const std::vector<double>& d, const char* what) {
        if (d.size() != weight_layers) {
            throw std::invalid_argument(fmt::format("{} lists {} densities for {} weight layers", what, d.size(),
                                                    weight_layers));
        }
        for (double v : d) {
            if (!(v > 0.0 && v <= 1.0)) {
                throw std::invalid_argument(fmt::format("{} density {} is outside (0, 1]", what, v));
            }
        }
    };
    check(initial_density, "initial schedule");
    for (const auto& r : rounds) {
        check(r.density, "prune round");
    }
}

double SmallWorldResult::reduction() const {
    if (dense_parameters == 0) {
        return 0.0;
    }
    return 1.0 - static_cast<double>(parameters) / static_cast<double>(dense_parameters);
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
    out << "round,layer,theta,density,L,C,accuracy\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.round, r.layer, r.theta, r.density,
                           r.L, r.C, r.accuracy);
    }
}

namespace {

void record(std::vector<MetricsRow>& trace, const Network& net, std::size_t round, double accuracy) {
    const auto graph = contribution_reachability(net);
    const auto wl = net.weight_layers();
    for (std::size_t k = 0; k < wl.size(); ++k) {
        const double d = net.params(wl[k]).sparsity.density();
        trace.push_back({round, k, 1.0 - d, d, metric_L(graph, k), metric_C(graph, k), accuracy});
    }
}

void train_epochs(Network& net, const Dataset& train, const SgdConfig& sgd, std::size_t epochs, RngStream& shuffle) {
    for (std::size_t e = 0; e < epochs; ++e) {
        train_epoch(net, train, sgd, shuffle);
    }
}

}  // namespace

SmallWorldResult smallworld_pipeline(Network net, const Dataset& train, const Dataset& eval,
                                     const SmallWorldConfig& cfg, const SmallWorldSchedule& schedule,
                                     const SgdConfig& sgd, std::uint64_t seed) {
    cfg.validate();
    sgd.validate();
    const auto wl = net.weight_layers();
    schedule.validate(wl.size());

    RngStream mask_rng(seed, "sw-mask");
    RngStream shortcut_rng(seed, "sw-shortcut");
    RngStream shuffle(seed, "shuffle");

    SmallWorldResult res;
    res.dense_parameters = net.dense_weight_count();
    for (std::size_t k = 0; k < wl.size(); ++k) {
        auto& p = net.params(wl[k]);
        SmallWorldConfig layer_cfg = cfg;
        layer_cfg.target_density = schedule.initial_density[k];
        const auto* conv = std::get_if<Conv2d>(&net.layer(wl[k]));
        const std::size_t rows_per_unit = conv != nullptr ? conv->kernel * conv->kernel : 1;
        RngStream layer_rng = mask_rng.child(fmt::format("layer{}", k));
        p.set_sparsity(build_initial_mask(p.fan_in(), p.fan_out(), layer_cfg, layer_rng, rows_per_unit));
    }

    train_epochs(net, train, sgd, schedule.initial_epochs, shuffle);
    record(res.trace, net, 0, evaluate(net, eval));

    for (std::size_t r = 0; r < schedule.rounds.size(); ++r) {
        const auto& round = schedule.rounds[r];
        std::vector<double> theta(wl.size());
        for (std::size_t k = 0; k < wl.size(); ++k) {
            const double current = net.params(wl[k]).sparsity.density();
            theta[k] = std::clamp(1.0 - round.density[k] / current, 0.0, 1.0 - 1e-12);
        }
        res.prunes.push_back(prune_threshold(net, theta, cfg.p, shortcut_rng));
        for (std::size_t li : wl) {
            net.params(li).reset_velocity();
        }
        train_epochs(net, train, sgd, round.finetune_epochs, shuffle);
        record(res.trace, net, r + 1, evaluate(net, eval));
    }

    res.accuracy = res.trace.back().accuracy;
    res.parameters = net.weight_count();
    res.network = std::move(net);
    return res;
}

}  // namespace xbarnet
