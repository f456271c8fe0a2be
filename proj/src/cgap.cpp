#include "xbarnet/cgap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <variant>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace xbarnet {

void CgapConfig::validate() const {
    if (!(seed_fraction > 0.0 && seed_fraction <= 1.0)) {
        throw std::invalid_argument(fmt::format("seed_fraction must be in (0, 1], got {}", seed_fraction));
    }
    if (growth_period == 0) {
        throw std::invalid_argument("growth_period must be at least one epoch");
    }
    if (!(growth_rate >= 0.0) || !(noise >= 0.0) || !(peak_eps >= 0.0) || !(width_cap > 0.0)) {
        throw std::invalid_argument(fmt::format("invalid growth settings: rate={} noise={} eps={} cap={}",
                                                growth_rate, noise, peak_eps, width_cap));
    }
    if (!(prune_rate >= 0.0 && prune_rate < 1.0) || !(accuracy_budget >= 0.0)) {
        throw std::invalid_argument(
            fmt::format("invalid prune settings: rate={} budget={}", prune_rate, accuracy_budget));
    }
    if (!(refine_learning_rate > 0.0)) {
        throw std::invalid_argument(fmt::format("refine_learning_rate must be positive, got {}", refine_learning_rate));
    }
    if (saliency_batch == 0) {
        throw std::invalid_argument("saliency_batch must be positive");
    }
    optimizer.validate();
}

namespace {

struct Hidden {
    std::size_t layer;  // weight layer producing the units
    std::size_t next;   // weight layer consuming them
};

std::vector<Hidden> hidden_layers(const Network& net) {
    const auto wl = net.weight_layers();
    std::vector<Hidden> out;
    for (std::size_t k = 0; k + 1 < wl.size(); ++k) {
        out.push_back({wl[k], wl[k + 1]});
    }
    return out;
}

template <typename V, typename T = typename V::value_type>
std::vector<T> gather_cols(const V& src, std::size_t rows, std::size_t cols,
                           std::span<const std::size_t> pick) {
    std::vector<T> out(rows * pick.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < pick.size(); ++j) {
            out[r * pick.size() + j] = src[r * cols + pick[j]];
        }
    }
    return out;
}

// Row blocks of `block` rows per unit.
template <typename V, typename T = typename V::value_type>
std::vector<T> gather_row_blocks(const V& src, std::size_t cols, std::size_t block,
                                 std::span<const std::size_t> pick) {
    std::vector<T> out;
    out.reserve(pick.size() * block * cols);
    for (std::size_t u : pick) {
        const auto first = src.begin() + static_cast<std::ptrdiff_t>(u * block * cols);
        out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(block * cols));
    }
    return out;
}

Mask mask_from(Shape shape, std::vector<std::uint8_t> bits) {
    Mask m(std::move(shape), false);
    m.bits_mut() = std::move(bits);
    return m;
}

// Rebuilds hidden layer k so that new unit j is a copy of old unit pick[j].
void reindex_units(Network& net, std::size_t k, std::span<const std::size_t> pick) {
    const auto hidden = hidden_layers(net);
    const auto [li, ni] = hidden.at(k);
    auto& p = net.params(li);
    auto& n = net.params(ni);
    const std::size_t width = p.fan_out();
    const std::size_t rows = p.fan_in();
    const std::size_t block = n.fan_in() / width;
    const std::size_t next_cols = n.fan_out();
    const std::size_t w2 = pick.size();

    p.weight = Tensor({rows, w2}, gather_cols(p.weight.values(), rows, width, pick));
    p.trainable = mask_from({rows, w2}, gather_cols(p.trainable.bits_mut(), rows, width, pick));
    p.sparsity = mask_from({rows, w2}, gather_cols(p.sparsity.bits_mut(), rows, width, pick));
    p.bias = Tensor({w2}, gather_cols(p.bias.values(), 1, width, pick));
    if (!p.weight_velocity.empty()) {
        p.weight_velocity = Tensor({rows, w2}, gather_cols(p.weight_velocity.values(), rows, width, pick));
    }
    if (!p.bias_velocity.empty()) {
        p.bias_velocity = Tensor({w2}, gather_cols(p.bias_velocity.values(), 1, width, pick));
    }

    const std::size_t nrows = w2 * block;
    n.weight = Tensor({nrows, next_cols}, gather_row_blocks(n.weight.values(), next_cols, block, pick));
    n.trainable = mask_from({nrows, next_cols}, gather_row_blocks(n.trainable.bits_mut(), next_cols, block, pick));
    n.sparsity = mask_from({nrows, next_cols}, gather_row_blocks(n.sparsity.bits_mut(), next_cols, block, pick));
    if (!n.weight_velocity.empty()) {
        n.weight_velocity =
            Tensor({nrows, next_cols}, gather_row_blocks(n.weight_velocity.values(), next_cols, block, pick));
    }

    if (auto* c = std::get_if<Conv2d>(&net.layer(li))) {
        c->out_channels = w2;
    }
    if (auto* c = std::get_if<Conv2d>(&net.layer(ni))) {
        c->in_channels = w2;
    }
    net.validate();
}

}  // namespace

std::vector<std::size_t> hidden_widths(const Network& net) {
    std::vector<std::size_t> out;
    for (const auto& h : hidden_layers(net)) {
        out.push_back(net.params(h.layer).fan_out());
    }
    return out;
}

Network build_seed(const Network& baseline, double fraction, RngStream& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument(fmt::format("seed fraction must be in (0, 1], got {}", fraction));
    }
    Network net = baseline;
    const auto widths = hidden_widths(net);
    for (std::size_t k = 0; k < widths.size(); ++k) {
        if (widths[k] == 0) {
            throw DimensionError(fmt::format("hidden layer {} has no units", k));
        }
        const auto target = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(widths[k]) - 1e-9)));
        std::vector<std::size_t> pick(std::min(target, widths[k]));
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        reindex_units(net, k, pick);
    }
    for (auto li : net.weight_layers()) {
        auto& p = net.params(li);
        p.trainable = Mask::ones(p.weight.shape());
        p.sparsity = Mask::ones(p.weight.shape());
    }
    init_he_uniform(net, rng);
    return net;
}

std::vector<std::vector<double>> unit_saliency(const Network& net, const Tensor& batch, std::span<const int> labels) {
    if (labels.empty()) {
        throw std::invalid_argument("saliency needs a non-empty batch");
    }
    const Activations acts = forward(net, batch);
    const Gradients grads = backward(net, acts, labels, {false, true});
    std::vector<std::vector<double>> scores;
    for (const auto& h : hidden_layers(net)) {
        // Score the post-ReLU activation when the unit has one.
        std::size_t j = h.layer;
        if (j + 1 < net.size() && std::holds_alternative<ReLU>(net.layer(j + 1))) {
            ++j;
        }
        const Tensor& a = acts[j + 1];
        const Tensor& g = grads.layers[j].output_grad;
        const std::size_t width = net.params(h.layer).fan_out();
        const std::size_t b = a.dim(0);
        const std::size_t spatial = a.size() / (b * width);
        std::vector<double> s(width, 0.0);
        for (std::size_t n = 0; n < b; ++n) {
            for (std::size_t u = 0; u < width; ++u) {
                double acc = 0.0;
                const std::size_t base = (n * width + u) * spatial;
                for (std::size_t t = 0; t < spatial; ++t) {
                    acc += g[base + t] * a[base + t];
                }
                s[u] += acc / static_cast<double>(spatial);
            }
        }
        for (auto& v : s) {
            v = std::abs(v);
        }
        scores.push_back(std::move(s));
    }
    return scores;
}

std::vector<GrowthEvent> grow(Network& net, const std::vector<std::vector<double>>& scores, double rate, double noise,
                              std::span<const std::size_t> caps, RngStream& rng, std::size_t epoch) {
    const auto widths = hidden_widths(net);
    if (scores.size() != widths.size() || (!caps.empty() && caps.size() != widths.size())) {
        throw std::invalid_argument(fmt::format("{} score vectors / {} caps for {} hidden layers", scores.size(),
                                                caps.size(), widths.size()));
    }
    if (!(rate >= 0.0) || !(noise >= 0.0)) {
        throw std::invalid_argument(fmt::format("invalid growth rate {} or noise {}", rate, noise));
    }
    std::vector<GrowthEvent> events;
    for (std::size_t k = 0; k < widths.size(); ++k) {
        const std::size_t width = widths[k];
        if (scores[k].size() != width) {
            throw DimensionError(fmt::format("layer {}: {} scores for {} units", k, scores[k].size(), width));
        }
        std::size_t n = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(width) - 1e-9));
        n = std::min(n, width);
        if (!caps.empty()) {
            n = std::min(n, caps[k] > width ? caps[k] - width : 0);
        }
        if (n == 0) {
            continue;
        }
        std::vector<std::size_t> order(width);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[k][a] > scores[k][b]; });
        std::vector<std::size_t> parents(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(parents.begin(), parents.end());

        const std::size_t before = net.weight_count();
        std::vector<std::size_t> pick(width);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        pick.insert(pick.end(), parents.begin(), parents.end());
        reindex_units(net, k, pick);

        const auto h = hidden_layers(net)[k];
        auto& p = net.params(h.layer);
        auto& nx = net.params(h.next);
        const std::size_t w2 = width + n;
        const std::size_t rows = p.fan_in();
        const std::size_t block = nx.fan_in() / w2;
        const std::size_t ncols = nx.fan_out();
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t child = width + c;
            const std::size_t parent = parents[c];
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t idx = r * w2 + child;
                if (noise > 0.0) {
                    p.weight[idx] += rng.normal(0.0, noise);
                }
                if (!p.sparsity[idx]) {
                    p.weight[idx] = 0.0;
                }
                if (!p.weight_velocity.empty()) {
                    p.weight_velocity[idx] = 0.0;
                }
            }
            if (!p.bias_velocity.empty()) {
                p.bias_velocity[child] = 0.0;
            }
            for (std::size_t r = 0; r < block; ++r) {
                for (std::size_t col = 0; col < ncols; ++col) {
                    const std::size_t pi = (parent * block + r) * ncols + col;
                    const std::size_t ci = (child * block + r) * ncols + col;
                    nx.weight[pi] *= 0.5;
                    nx.weight[ci] = nx.weight[pi];
                    if (!nx.weight_velocity.empty()) {
                        nx.weight_velocity[ci] = 0.0;
                    }
                }
            }
        }
        // Per-split counts: each child adds its incoming column and its
        // outgoing row block.
        std::size_t running = before;
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t child = width + c;
            std::size_t added = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                added += p.sparsity[r * w2 + child] ? 1 : 0;
            }
            for (std::size_t r = 0; r < block * ncols; ++r) {
                added += nx.sparsity[child * block * ncols + r] ? 1 : 0;
            }
            events.push_back({epoch, k, parents[c], child, running, running + added});
            running += added;
        }
    }
    return events;
}

void remove_units(Network& net, std::size_t k, std::vector<std::size_t> units) {
    const auto widths = hidden_widths(net);
    const std::size_t width = widths.at(k);
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());
    if (!units.empty() && units.back() >= width) {
        throw std::out_of_range(fmt::format("unit {} does not exist in a layer of width {}", units.back(), width));
    }
    if (units.size() >= width) {
        throw std::invalid_argument(fmt::format("cannot remove all {} units of hidden layer {}", width, k));
    }
    std::vector<std::size_t> keep;
    for (std::size_t u = 0, i = 0; u < width; ++u) {
        if (i < units.size() && units[i] == u) {
            ++i;
        } else {
            keep.push_back(u);
        }
    }
    reindex_units(net, k, keep);
}

std::vector<double> unit_norms(const Network& net, std::size_t k) {
    const auto& p = net.params(hidden_layers(net).at(k).layer);
    const std::size_t width = p.fan_out();
    std::vector<double> out(width, 0.0);
    for (std::size_t r = 0; r < p.fan_in(); ++r) {
        for (std::size_t u = 0; u < width; ++u) {
            const double w = p.weight[r * width + u];
            out[u] += w * w;
        }
    }
    for (auto& v : out) {
        v = std::sqrt(v);
    }
    return out;
}

bool detect_peak(std::span<const double> trace, std::size_t patience, double eps) {
    if (trace.empty()) {
        throw std::invalid_argument("peak detection needs a non-empty trace");
    }
    double best = trace.front();
    std::size_t stale = 0;
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i] > best + eps) {
            best = trace[i];
            stale = 0;
        } else {
            ++stale;
        }
    }
    return stale >= patience;
}

namespace {

void train_logged(Network& net, const Dataset& train, const Dataset& val, const SgdConfig& sgd, std::size_t epochs,
                  RngStream& shuffle, const char* phase, std::size_t& epoch, std::vector<CgapTraceRow>* trace) {
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto stats = train_epoch(net, train, sgd, shuffle);
        ++epoch;
        if (trace != nullptr) {
            trace->push_back({phase, epoch, hidden_widths(net), net.weight_count(), stats.accuracy,
                              evaluate(net, val)});
        }
    }
}

}  // namespace

std::vector<PruneStep> prune_units(Network& net, const Dataset& train, const Dataset& val, const CgapConfig& cfg,
                                   double peak_accuracy, RngStream& shuffle, std::vector<CgapTraceRow>* trace,
                                   std::size_t first_epoch) {
    cfg.validate();
    std::vector<PruneStep> steps;
    std::size_t epoch = first_epoch;
    SgdConfig refine = cfg.optimizer;
    refine.learning_rate = cfg.refine_learning_rate;
    for (std::size_t s = 0; s < cfg.max_prune_steps; ++s) {
        PruneStep step;
        step.widths_before = hidden_widths(net);
        step.params_before = net.weight_count();
        const Network snapshot = net;
        bool removed = false;
        for (std::size_t k = 0; k < step.widths_before.size(); ++k) {
            const std::size_t width = step.widths_before[k];
            std::size_t n = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::floor(cfg.prune_rate * static_cast<double>(width))));
            n = std::min(n, width - 1);
            if (cfg.prune_rate == 0.0 || n == 0) {
                continue;
            }
            const auto norms = unit_norms(net, k);
            std::vector<std::size_t> order(width);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
            remove_units(net, k, std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n)));
            removed = true;
        }
        if (!removed) {
            break;
        }
        train_logged(net, train, val, refine, cfg.finetune_epochs, shuffle, "prune", epoch, trace);
        step.widths_after = hidden_widths(net);
        step.params_after = net.weight_count();
        step.val_accuracy = evaluate(net, val);
        step.accepted = peak_accuracy - step.val_accuracy <= cfg.accuracy_budget;
        steps.push_back(step);
        if (!step.accepted) {
            net = snapshot;
            break;
        }
    }
    return steps;
}

CgapResult run_cgap(const Network& baseline, const Dataset& train, const Dataset& val, const CgapConfig& cfg,
                    std::uint64_t seed) {
    cfg.validate();
    RngStream init(seed, "init");
    RngStream noise(seed, "cgap-noise");
    RngStream shuffle(seed, "shuffle");
    RngStream sample = shuffle.child("saliency");

    CgapResult res;
    Network net = build_seed(baseline, cfg.seed_fraction, init);
    res.seed_widths = hidden_widths(net);
    res.seed_parameters = net.weight_count();
    std::vector<std::size_t> caps;
    for (auto w : hidden_widths(baseline)) {
        caps.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.width_cap * static_cast<double>(w)))));
    }

    std::size_t epoch = 0;
    std::vector<double> val_trace;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t event = 0; event < cfg.max_growth_events; ++event) {
        train_logged(net, train, val, cfg.optimizer, cfg.growth_period, shuffle, "grow", epoch, &res.trace);
        val_trace.push_back(res.trace.back().val_accuracy);
        if (detect_peak(val_trace, cfg.peak_patience, cfg.peak_eps)) {
            break;
        }
        sample.shuffle(std::span<std::size_t>(order));
        const std::span<const std::size_t> idx(order.data(), std::min(cfg.saliency_batch, order.size()));
        const auto scores = unit_saliency(net, train.batch(idx), train.batch_labels(idx));
        const auto events = grow(net, scores, cfg.growth_rate, cfg.noise, caps, noise, epoch);
        res.growth.insert(res.growth.end(), events.begin(), events.end());
    }
    SgdConfig refine = cfg.optimizer;
    refine.learning_rate = cfg.refine_learning_rate;
    train_logged(net, train, val, refine, cfg.peak_epochs, shuffle, "peak", epoch, &res.trace);

    res.peak_widths = hidden_widths(net);
    res.peak_parameters = net.weight_count();
    res.peak_val_accuracy = evaluate(net, val);

    res.prunes = prune_units(net, train, val, cfg, res.peak_val_accuracy, shuffle, &res.trace, epoch);
    res.final_widths = hidden_widths(net);
    res.final_parameters = net.weight_count();
    res.final_val_accuracy = evaluate(net, val);
    res.network = std::move(net);
    return res;
}

void write_cgap_trace_csv(std::ostream& out, const std::vector<CgapTraceRow>& rows) {
    out << "phase,epoch,widths,parameters,train_accuracy,val_accuracy\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{},{:.17g},{:.17g}\n", r.phase, r.epoch, fmt::join(r.widths, ";"), r.parameters,
                           r.train_accuracy, r.val_accuracy);
    }
}

}  // namespace xbarnet
