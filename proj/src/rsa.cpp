#include "xbarnet/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "linalg.hpp"

namespace xbarnet {

RsaSelection::RsaSelection(std::size_t rows, std::size_t cols, std::size_t per_row, std::vector<std::uint32_t> columns)
    : rows_(rows), cols_(cols), per_row_(per_row), columns_(std::move(columns)) {
    if (per_row_ == 0 || per_row_ > cols_ || columns_.size() != rows_ * per_row_) {
        throw std::invalid_argument(fmt::format("selection of {} columns does not hold {} per row on {}x{}",
                                                columns_.size(), per_row_, rows_, cols_));
    }
    for (std::size_t r = 0; r < rows_; ++r) {
        auto first = columns_.begin() + static_cast<std::ptrdiff_t>(r * per_row_);
        auto last = first + static_cast<std::ptrdiff_t>(per_row_);
        std::sort(first, last);
        if (std::adjacent_find(first, last) != last || *(last - 1) >= cols_) {
            throw std::invalid_argument(fmt::format("row {} of the selection has a duplicate or out-of-range column", r));
        }
    }
}

std::span<const std::uint32_t> RsaSelection::row_columns(std::size_t row) const {
    return std::span<const std::uint32_t>(columns_).subspan(row * per_row_, per_row_);
}

std::optional<std::size_t> RsaSelection::compact_index(std::size_t row, std::size_t col) const {
    if (row >= rows_) {
        return std::nullopt;
    }
    const auto cols = row_columns(row);
    const auto it = std::lower_bound(cols.begin(), cols.end(), col);
    if (it == cols.end() || *it != col) {
        return std::nullopt;
    }
    return row * per_row_ + static_cast<std::size_t>(it - cols.begin());
}

std::vector<std::size_t> RsaSelection::column_counts() const {
    std::vector<std::size_t> counts(cols_, 0);
    for (auto c : columns_) {
        ++counts[c];
    }
    return counts;
}

Mask RsaSelection::to_mask() const {
    Mask m = Mask::zeros({rows_, cols_});
    for (std::size_t k = 0; k < columns_.size(); ++k) {
        const auto [r, c] = cell(k);
        m.set(r, c, true);
    }
    return m;
}

std::size_t rsa_per_row(std::size_t cols, double fraction) {
    const double r = std::round(fraction * static_cast<double>(cols));
    if (!(fraction > 0.0) || r < 1.0 || r > static_cast<double>(cols)) {
        throw std::invalid_argument(
            fmt::format("fraction {} gives {} cells per row for {} columns; need 1..{}", fraction, r, cols, cols));
    }
    return static_cast<std::size_t>(r);
}

namespace {

// One construction attempt. Returns false on a dead end.
bool try_select(std::size_t rows, std::size_t cols, std::size_t per_row, RngStream& rng,
                std::vector<std::uint32_t>& out) {
    const std::size_t total = rows * per_row;
    std::vector<std::uint32_t> seq;
    seq.reserve(total + cols);
    std::vector<std::uint32_t> perm(cols);
    while (seq.size() < total) {
        std::iota(perm.begin(), perm.end(), 0U);
        rng.shuffle(std::span<std::uint32_t>(perm));
        seq.insert(seq.end(), perm.begin(), perm.end());
    }
    seq.resize(total);

    // Position k goes to row k % rows, so each round hands every row one
    // column. used[row * cols + col] marks columns a row already holds.
    std::vector<std::uint8_t> used(rows * cols, 0);
    auto held = [&](std::size_t row, std::uint32_t col) { return used[row * cols + col] != 0; };
    for (std::size_t k = 0; k < total; ++k) {
        const std::size_t row = k % rows;
        if (held(row, seq[k])) {
            bool fixed = false;
            // Prefer a not-yet-dealt label; start the scan at a random
            // offset so repairs stay uniform.
            const std::size_t later = total - k - 1;
            if (later > 0) {
                const std::size_t start = rng.index(later);
                for (std::size_t s = 0; s < later && !fixed; ++s) {
                    const std::size_t j = k + 1 + (start + s) % later;
                    if (!held(row, seq[j])) {
                        std::swap(seq[k], seq[j]);
                        fixed = true;
                    }
                }
            }
            // Otherwise trade with an earlier position whose row can take
            // our label and whose label we can take.
            if (!fixed && k > 0) {
                const std::size_t start = rng.index(k);
                for (std::size_t s = 0; s < k && !fixed; ++s) {
                    const std::size_t j = (start + s) % k;
                    const std::size_t other = j % rows;
                    if (other != row && !held(row, seq[j]) && !held(other, seq[k])) {
                        used[other * cols + seq[j]] = 0;
                        used[other * cols + seq[k]] = 1;
                        std::swap(seq[k], seq[j]);
                        fixed = true;
                    }
                }
            }
            if (!fixed) {
                return false;
            }
        }
        used[row * cols + seq[k]] = 1;
    }
    // Regroup row-major: row r's labels sit at positions r, r + rows, ...
    out.assign(total, 0);
    for (std::size_t k = 0; k < total; ++k) {
        out[(k % rows) * per_row + k / rows] = seq[k];
    }
    return true;
}

}  // namespace

std::vector<double> gather_selected(const RsaSelection& selection, const Tensor& dense) {
    if (dense.size() != selection.rows() * selection.cols()) {
        throw DimensionError(fmt::format("cannot gather a {}x{} selection from {}", selection.rows(),
                                         selection.cols(), shape_string(dense.shape())));
    }
    std::vector<double> out(selection.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto [r, c] = selection.cell(k);
        out[k] = dense[r * selection.cols() + c];
    }
    return out;
}

RsaSelection select_cells_per_row(std::size_t rows, std::size_t cols, std::size_t per_row, RngStream& rng) {
    if (rows == 0 || per_row == 0 || per_row > cols) {
        throw std::invalid_argument(
            fmt::format("cannot select {} cells per row on a {}x{} array", per_row, rows, cols));
    }
    std::vector<std::uint32_t> columns;
    if (per_row == cols) {
        columns.resize(rows * cols);
        for (std::size_t k = 0; k < columns.size(); ++k) {
            columns[k] = static_cast<std::uint32_t>(k % cols);
        }
        return RsaSelection(rows, cols, per_row, std::move(columns));
    }
    constexpr int kMaxAttempts = 64;
    RngStream stream = rng;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        if (try_select(rows, cols, per_row, stream, columns)) {
            return RsaSelection(rows, cols, per_row, std::move(columns));
        }
        stream = rng.child(fmt::format("retry{}", attempt + 1));
    }
    throw std::runtime_error(
        fmt::format("no regular selection found for {}x{} with {} per row after {} attempts", rows, cols, per_row,
                    kMaxAttempts));
}

RsaSelection select_cells(std::size_t rows, std::size_t cols, double fraction, RngStream& rng) {
    return select_cells_per_row(rows, cols, rsa_per_row(cols, fraction), rng);
}

HybridLayer::HybridLayer(CrossbarArray xbar, RsaSelection selection, double init_sigma, RngStream& init)
    : xbar_(std::move(xbar)), selection_(std::move(selection)), values_(selection_.size(), 0.0) {
    if (!(init_sigma >= 0.0)) {
        throw std::invalid_argument(fmt::format("init_sigma must be >= 0, got {}", init_sigma));
    }
    if (selection_.rows() != xbar_.rows() || selection_.cols() != xbar_.cols()) {
        throw DimensionError(fmt::format("selection {}x{} does not fit crossbar {}x{}", selection_.rows(),
                                         selection_.cols(), xbar_.rows(), xbar_.cols()));
    }
    for (auto& v : values_) {
        v = init.normal(0.0, init_sigma);
    }
}

HybridLayer::HybridLayer(CrossbarArray xbar, RsaSelection selection, std::vector<double> values)
    : xbar_(std::move(xbar)), selection_(std::move(selection)), values_(std::move(values)) {
    if (selection_.rows() != xbar_.rows() || selection_.cols() != xbar_.cols() ||
        values_.size() != selection_.size()) {
        throw DimensionError(fmt::format("selection {}x{} with {} values does not fit crossbar {}x{}",
                                         selection_.rows(), selection_.cols(), values_.size(), xbar_.rows(),
                                         xbar_.cols()));
    }
}

Tensor HybridLayer::combined_weights() const {
    Tensor w = xbar_.effective_weights();
    const std::size_t cols = selection_.cols();
    for (std::size_t k = 0; k < values_.size(); ++k) {
        const auto [r, c] = selection_.cell(k);
        w[r * cols + c] += values_[k];
    }
    return w;
}

Tensor hybrid_forward(HybridLayer& layer, const Tensor& x) {
    const auto& xbar = layer.crossbar();
    if (!xbar.programmed()) {
        throw std::logic_error("crossbar must be programmed before it can be read");
    }
    const bool single = x.rank() == 1;
    if (x.empty() || (single && x.dim(0) != xbar.rows()) || (!single && (x.rank() != 2 || x.dim(1) != xbar.rows()))) {
        throw DimensionError(
            fmt::format("input {} does not match {} crossbar rows", shape_string(x.shape()), xbar.rows()));
    }
    Tensor y = detail::affine(x, layer.combined_weights(), nullptr);
    layer.crossbar().record_reads(single ? 1 : x.dim(0));
    if (single) {
        y.reshape({xbar.cols()});
    }
    return y;
}

std::vector<double> rsa_backward(const HybridLayer& layer, const Tensor& upstream_grad, const Tensor& x) {
    const auto& sel = layer.selection();
    const std::size_t rows = sel.rows();
    const std::size_t cols = sel.cols();
    if (x.size() % rows != 0 || upstream_grad.size() != (x.size() / rows) * cols) {
        throw DimensionError(fmt::format("input {} and gradient {} do not match a {}x{} layer",
                                         shape_string(x.shape()), shape_string(upstream_grad.shape()), rows, cols));
    }
    const std::size_t batch = x.size() / rows;
    const std::size_t per_row = sel.per_row();
    const auto columns = sel.columns();
    std::vector<double> grad(sel.size(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = x.raw() + b * rows;
        const double* gb = upstream_grad.raw() + b * cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const double xi = xb[r];
            if (xi == 0.0) {
                continue;
            }
            const std::size_t base = r * per_row;
            for (std::size_t s = 0; s < per_row; ++s) {
                grad[base + s] += xi * gb[columns[base + s]];
            }
        }
    }
    return grad;
}

void RsaConfig::validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument(fmt::format("RSA fraction must be in (0, 1], got {}", fraction));
    }
    if (!(init_sigma > 0.0)) {
        throw std::invalid_argument(fmt::format("RSA init_sigma must be positive, got {}", init_sigma));
    }
    optimizer.validate();
}

std::uint64_t CrossbarModel::write_pulses() const {
    std::uint64_t n = 0;
    for (const auto& a : arrays) {
        n += a.write_pulse_count();
    }
    return n;
}

std::uint64_t CrossbarModel::reads() const {
    std::uint64_t n = 0;
    for (const auto& a : arrays) {
        n += a.read_count();
    }
    return n;
}

void CrossbarModel::sync_weights() {
    for (std::size_t m = 0; m < mapped_layers.size(); ++m) {
        network.params(mapped_layers[m]).weight = arrays[m].effective_weights();
    }
}

CrossbarModel program_network(const Network& trained, const DeviceConfig& cfg, RngStream& faults, RngStream& writes) {
    cfg.validate();
    CrossbarModel model{trained, trained.weight_layers(), {}, {}};
    std::vector<double> before;
    std::vector<double> after;
    for (std::size_t li : model.mapped_layers) {
        const Tensor& w = trained.params(li).weight;
        FaultMap fm = inject_faults(w.dim(0), w.dim(1), cfg, faults);
        CrossbarArray xbar(cfg, std::move(fm), WeightScale::from_weights(w));
        xbar.program_once(w, writes);
        before.insert(before.end(), w.data().begin(), w.data().end());
        const auto& eff = xbar.effective_weights().data();
        after.insert(after.end(), eff.begin(), eff.end());
        model.arrays.push_back(std::move(xbar));
    }
    const std::size_t n = before.size();
    model.histogram = make_histogram(Tensor({n}, std::move(before)), Tensor({n}, std::move(after)));
    model.sync_weights();
    return model;
}

std::uint64_t RsaModel::write_pulses() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) {
        n += l.crossbar().write_pulse_count();
    }
    return n;
}

std::uint64_t RsaModel::reads() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) {
        n += l.crossbar().read_count();
    }
    return n;
}

void RsaModel::sync_weights() {
    for (std::size_t m = 0; m < mapped_layers.size(); ++m) {
        network.params(mapped_layers[m]).weight = layers[m].combined_weights();
    }
}

Network RsaModel::crossbar_only() const {
    Network net = network;
    for (std::size_t m = 0; m < mapped_layers.size(); ++m) {
        net.params(mapped_layers[m]).weight = layers[m].crossbar().effective_weights();
    }
    return net;
}

RsaModel attach_rsa(CrossbarModel model, const RsaConfig& cfg, RngStream& select, RngStream& init) {
    cfg.validate();
    RsaModel out{std::move(model.network), std::move(model.mapped_layers), {}};
    for (std::size_t m = 0; m < out.mapped_layers.size(); ++m) {
        auto& xbar = model.arrays[m];
        const auto per_row = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::round(cfg.fraction * static_cast<double>(xbar.cols()))), 1, xbar.cols());
        RngStream layer_select = select.child(fmt::format("layer{}", m));
        RsaSelection sel = select_cells_per_row(xbar.rows(), xbar.cols(), per_row, layer_select);
        out.layers.emplace_back(std::move(xbar), std::move(sel), cfg.init_sigma, init);

        // Crossbar weights are frozen; only the bias stays with the optimizer.
        auto& p = out.network.params(out.mapped_layers[m]);
        p.set_trainable(Mask::zeros(p.weight.shape()));
        p.reset_velocity();
    }
    out.sync_weights();
    return out;
}

AdaptationTrace adapt(RsaModel& model, const Dataset& train, const Dataset& eval, const RsaConfig& cfg,
                      const TimingModel& timing, RngStream& shuffle) {
    cfg.validate();
    if (train.size() == 0) {
        throw std::invalid_argument("adaptation needs a non-empty training set");
    }
    const std::uint64_t writes_before = model.write_pulses();
    const std::uint64_t reads_before = model.reads();

    AdaptationTrace trace;
    trace.points.push_back({0, evaluate(model.crossbar_only(), eval), 0.0});

    const auto& opt = cfg.optimizer;
    std::vector<std::vector<double>> velocity(model.layers.size());
    for (std::size_t m = 0; m < model.layers.size(); ++m) {
        velocity[m].assign(model.layers[m].values().size(), 0.0);
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Dense layers gather straight from activations; convolutions need the
    // dense weight gradient of their unfolded input.
    bool any_conv = false;
    for (std::size_t li : model.mapped_layers) {
        any_conv = any_conv || std::holds_alternative<Conv2d>(model.network.layer(li));
    }
    const BackwardOptions options{any_conv, true};

    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        shuffle.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t stop = std::min(order.size(), start + opt.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Tensor x = train.batch(idx);
            const auto labels = train.batch_labels(idx);
            const Activations acts = forward(model.network, x);
            const Gradients grads = backward(model.network, acts, labels, options);

            for (std::size_t m = 0; m < model.layers.size(); ++m) {
                const std::size_t li = model.mapped_layers[m];
                auto& layer = model.layers[m];
                // The forward pass through this layer was one crossbar read
                // per sample plus the overlay MAC.
                layer.crossbar().record_reads(idx.size());
                std::vector<double> g;
                if (std::holds_alternative<Dense>(model.network.layer(li))) {
                    g = rsa_backward(layer, grads.layers[li].output_grad, acts[li]);
                } else {
                    g = gather_selected(layer.selection(), grads.layers[li].weight);
                }
                auto values = layer.values();
                auto& vel = velocity[m];
                auto& w = model.network.params(li).weight;
                const auto& base = layer.crossbar().effective_weights();
                const std::size_t cols = layer.selection().cols();
                for (std::size_t k = 0; k < values.size(); ++k) {
                    vel[k] = opt.momentum * vel[k] - opt.learning_rate * g[k];
                    values[k] += vel[k];
                    const auto [r, c] = layer.selection().cell(k);
                    w[r * cols + c] = base[r * cols + c] + values[k];
                }
            }
            sgd_step(model.network, grads, opt);
        }
        const std::uint64_t reads = model.reads() - reads_before;
        const std::uint64_t writes = model.write_pulses() - writes_before;
        trace.points.push_back({epoch, evaluate(model.network, eval), cost_of(writes, reads, timing).total});
    }

    trace.write_pulses = model.write_pulses() - writes_before;
    trace.reads = model.reads() - reads_before;
    if (trace.write_pulses != 0) {
        throw std::logic_error(fmt::format("RSA adaptation issued {} crossbar write pulses", trace.write_pulses));
    }
    trace.modeled_seconds = cost_of(trace.write_pulses, trace.reads, timing).total;
    return trace;
}

double CompareResult::recovered_fraction() const {
    const double gap = ideal_accuracy - faulted_accuracy;
    if (gap <= 0.0) {
        return 1.0;
    }
    return (rsa_accuracy - faulted_accuracy) / gap;
}

CompareResult compare_rsa_vs_rvw(const Network& trained, const Dataset& train, const Dataset& test,
                                 const CompareScenario& scenario) {
    scenario.device.validate();
    scenario.rvw.validate();
    scenario.rsa.validate();
    CompareResult res;
    res.ideal_accuracy = evaluate(trained, test);

    RngStream faults(scenario.seed, "faults");
    RngStream writes(scenario.seed, "write");
    CrossbarModel programmed = program_network(trained, scenario.device, faults, writes);
    res.faulted_accuracy = evaluate(programmed.network, test);
    res.histogram = programmed.histogram;

    // R-V-W arm: reprogram a copy of the same faulted arrays.
    {
        CrossbarModel arm = programmed;
        RngStream rvw_writes = writes.child("rvw");
        const auto w0 = arm.write_pulses();
        const auto r0 = arm.reads();
        for (std::size_t m = 0; m < arm.mapped_layers.size(); ++m) {
            res.rvw_report.merge(
                arm.arrays[m].program_rvw(trained.params(arm.mapped_layers[m]).weight, scenario.rvw, rvw_writes));
        }
        arm.sync_weights();
        res.rvw_accuracy = evaluate(arm.network, test);
        res.rvw_seconds = cost_of(arm.write_pulses() - w0, arm.reads() - r0, scenario.timing).total;
    }

    // RSA arm.
    {
        RngStream select(scenario.seed, "rsa-select");
        RngStream init = RngStream(scenario.seed, "init").child("rsa");
        RngStream shuffle(scenario.seed, "shuffle");
        RsaModel model = attach_rsa(std::move(programmed), scenario.rsa, select, init);
        for (const auto& l : model.layers) {
            res.rsa_cells += l.selection().size();
        }
        res.rsa_trace = adapt(model, train, test, scenario.rsa, scenario.timing, shuffle);
        res.rsa_accuracy = res.rsa_trace.final_accuracy();
        res.rsa_seconds = res.rsa_trace.modeled_seconds;
        res.rsa_write_pulses = res.rsa_trace.write_pulses;
    }
    res.speedup = res.rsa_seconds > 0.0 ? res.rvw_seconds / res.rsa_seconds : 0.0;
    return res;
}

}  // namespace xbarnet
