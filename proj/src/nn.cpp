#include "xbarnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "linalg.hpp"

namespace xbarnet {

using detail::as_matrix;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

// ---------------------------------------------------------------------------
// Parameters and layers
// ---------------------------------------------------------------------------

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0) || !(momentum >= 0.0 && momentum < 1.0) || batch_size == 0 || epochs == 0) {
        throw std::invalid_argument(
            fmt::format("invalid SGD config: lr={} momentum={} batch={} epochs={}", learning_rate, momentum,
                        batch_size, epochs));
    }
}

ParamBlock::ParamBlock(std::size_t fan_in, std::size_t fan_out)
    : weight({fan_in, fan_out}),
      bias({fan_out}),
      trainable(Mask::ones({fan_in, fan_out})),
      sparsity(Mask::ones({fan_in, fan_out})) {}

void ParamBlock::set_sparsity(Mask mask) {
    if (mask.shape() != weight.shape()) {
        throw DimensionError(fmt::format("sparsity mask {} does not match weight {}", shape_string(mask.shape()),
                                         shape_string(weight.shape())));
    }
    sparsity = std::move(mask);
    apply_sparsity();
}

void ParamBlock::set_trainable(Mask mask) {
    if (mask.shape() != weight.shape()) {
        throw DimensionError(fmt::format("trainability mask {} does not match weight {}",
                                         shape_string(mask.shape()), shape_string(weight.shape())));
    }
    trainable = std::move(mask);
}

void ParamBlock::apply_sparsity() {
    for (std::size_t i = 0; i < weight.size(); ++i) {
        if (!sparsity[i]) {
            weight[i] = 0.0;
        }
    }
}

void ParamBlock::reset_velocity() {
    weight_velocity = Tensor();
    bias_velocity = Tensor();
}

Layer make_dense(std::size_t in, std::size_t out) {
    return Dense{ParamBlock(in, out)};
}

Layer make_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride) {
    return Conv2d{in_channels, out_channels, kernel, stride, ParamBlock(in_channels * kernel * kernel, out_channels)};
}

std::string layer_name(const Layer& layer) {
    return std::visit(overloaded{
                          [](const Dense& d) {
                              return fmt::format("Dense({}, {})", d.params.fan_in(), d.params.fan_out());
                          },
                          [](const Conv2d& c) {
                              return fmt::format("Conv2d({}, {}, k={}, s={})", c.in_channels, c.out_channels,
                                                 c.kernel, c.stride);
                          },
                          [](const MaxPool& p) { return fmt::format("MaxPool({})", p.kernel); },
                          [](const ReLU&) { return std::string("ReLU"); },
                          [](const SoftmaxCrossEntropy&) { return std::string("SoftmaxCrossEntropy"); },
                      },
                      layer);
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(Shape input_shape, std::vector<Layer> layers, std::string rng_label)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), rng_label_(std::move(rng_label)) {
    validate();
}

void Network::validate() {
    shapes_.assign(1, input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Shape& in = shapes_.back();
        auto fail = [&](const std::string& why) {
            return DimensionError(fmt::format("layer {} ({}): {}", i, layer_name(layers_[i]), why));
        };
        Shape out = std::visit(
            overloaded{
                [&](const Dense& d) -> Shape {
                    if (d.params.weight.rank() != 2 || d.params.bias.size() != d.params.fan_out()) {
                        throw fail("malformed parameters");
                    }
                    if (shape_size(in) != d.params.fan_in()) {
                        throw fail(fmt::format("expects {} inputs, got {}", d.params.fan_in(), shape_string(in)));
                    }
                    return {d.params.fan_out()};
                },
                [&](const Conv2d& c) -> Shape {
                    if (in.size() != 3 || in[0] != c.in_channels) {
                        throw fail(fmt::format("expects [{}, H, W] input, got {}", c.in_channels, shape_string(in)));
                    }
                    if (c.kernel == 0 || c.stride == 0 || in[1] < c.kernel || in[2] < c.kernel) {
                        throw fail(fmt::format("kernel {} does not fit input {}", c.kernel, shape_string(in)));
                    }
                    if (c.params.weight.shape() != Shape{c.in_channels * c.kernel * c.kernel, c.out_channels} ||
                        c.params.bias.size() != c.out_channels) {
                        throw fail("malformed parameters");
                    }
                    return {c.out_channels, (in[1] - c.kernel) / c.stride + 1, (in[2] - c.kernel) / c.stride + 1};
                },
                [&](const MaxPool& p) -> Shape {
                    if (in.size() != 3 || p.kernel == 0 || in[1] < p.kernel || in[2] < p.kernel) {
                        throw fail(fmt::format("cannot pool input {}", shape_string(in)));
                    }
                    return {in[0], in[1] / p.kernel, in[2] / p.kernel};
                },
                [&](const ReLU&) -> Shape { return in; },
                [&](const SoftmaxCrossEntropy&) -> Shape {
                    if (i + 1 != layers_.size()) {
                        throw fail("loss head must be the last layer");
                    }
                    if (in.size() != 1) {
                        throw fail(fmt::format("expects flat logits, got {}", shape_string(in)));
                    }
                    return in;
                },
            },
            layers_[i]);
        shapes_.push_back(std::move(out));
    }
}

std::vector<std::size_t> Network::weight_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (has_params(i)) {
            out.push_back(i);
        }
    }
    return out;
}

bool Network::has_params(std::size_t i) const {
    return std::holds_alternative<Dense>(layers_.at(i)) || std::holds_alternative<Conv2d>(layers_.at(i));
}

ParamBlock& Network::params(std::size_t i) {
    if (auto* d = std::get_if<Dense>(&layers_.at(i))) {
        return d->params;
    }
    if (auto* c = std::get_if<Conv2d>(&layers_.at(i))) {
        return c->params;
    }
    throw std::invalid_argument(fmt::format("layer {} ({}) has no parameters", i, layer_name(layers_.at(i))));
}

const ParamBlock& Network::params(std::size_t i) const {
    return const_cast<Network*>(this)->params(i);
}

std::size_t Network::num_classes() const {
    return shape_size(shapes_.back());
}

std::size_t Network::weight_count() const {
    std::size_t n = 0;
    for (auto i : weight_layers()) {
        n += params(i).sparsity.count();
    }
    return n;
}

std::size_t Network::dense_weight_count() const {
    std::size_t n = 0;
    for (auto i : weight_layers()) {
        n += params(i).weight.size();
    }
    return n;
}

std::size_t Network::bias_count() const {
    std::size_t n = 0;
    for (auto i : weight_layers()) {
        n += params(i).bias.size();
    }
    return n;
}

void init_he_uniform(Network& net, RngStream& rng) {
    for (auto i : net.weight_layers()) {
        auto& p = net.params(i);
        const double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in()));
        for (auto& w : p.weight.data()) {
            w = rng.uniform(-limit, limit);
        }
        p.bias.fill(0.0);
        p.apply_sparsity();
        p.reset_velocity();
    }
}

Network make_mlp(std::span<const std::size_t> widths, RngStream& rng) {
    if (widths.size() < 2) {
        throw std::invalid_argument("an MLP needs at least input and output widths");
    }
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers.push_back(make_dense(widths[i], widths[i + 1]));
        if (i + 2 < widths.size()) {
            layers.emplace_back(ReLU{});
        }
    }
    layers.emplace_back(SoftmaxCrossEntropy{});
    Network net({widths.front()}, std::move(layers), rng.label());
    init_he_uniform(net, rng);
    return net;
}

Network make_lenet5(RngStream& rng) {
    std::vector<Layer> layers;
    layers.push_back(make_conv2d(1, 6, 5));
    layers.emplace_back(ReLU{});
    layers.emplace_back(MaxPool{2});
    layers.push_back(make_conv2d(6, 16, 5));
    layers.emplace_back(ReLU{});
    layers.emplace_back(MaxPool{2});
    layers.push_back(make_dense(16 * 4 * 4, 120));
    layers.emplace_back(ReLU{});
    layers.push_back(make_dense(120, 84));
    layers.emplace_back(ReLU{});
    layers.push_back(make_dense(84, 10));
    layers.emplace_back(SoftmaxCrossEntropy{});
    Network net({1, 28, 28}, std::move(layers), rng.label());
    init_he_uniform(net, rng);
    return net;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
    std::size_t batch, channels, height, width, kernel, stride, out_h, out_w;
};

ConvGeometry conv_geometry(const Conv2d& c, const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != c.in_channels) {
        throw DimensionError(fmt::format("conv expects [B, {}, H, W], got {}", c.in_channels, shape_string(x.shape())));
    }
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    return {x.dim(0), c.in_channels, h, w, c.kernel, c.stride, (h - c.kernel) / c.stride + 1,
            (w - c.kernel) / c.stride + 1};
}

Tensor im2col(const Tensor& x, const ConvGeometry& g) {
    const std::size_t patch = g.channels * g.kernel * g.kernel;
    Tensor cols({g.batch * g.out_h * g.out_w, patch});
    double* dst = cols.raw();
    const double* src = x.raw();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                for (std::size_t c = 0; c < g.channels; ++c) {
                    const double* plane = src + (b * g.channels + c) * g.height * g.width;
                    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
                        const double* row = plane + (oh * g.stride + kh) * g.width + ow * g.stride;
                        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                            *dst++ = row[kw];
                        }
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Tensor& cols, const ConvGeometry& g, Tensor& dx) {
    const double* src = cols.raw();
    double* dst = dx.raw();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                for (std::size_t c = 0; c < g.channels; ++c) {
                    double* plane = dst + (b * g.channels + c) * g.height * g.width;
                    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
                        double* row = plane + (oh * g.stride + kh) * g.width + ow * g.stride;
                        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                            row[kw] += *src++;
                        }
                    }
                }
            }
        }
    }
}

Tensor conv_forward(const Conv2d& c, const Tensor& x) {
    const auto g = conv_geometry(c, x);
    const Tensor cols = im2col(x, g);
    const Tensor m = detail::affine(cols, c.params.weight, &c.params.bias);
    const std::size_t positions = g.out_h * g.out_w;
    Tensor y({g.batch, c.out_channels, g.out_h, g.out_w});
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t p = 0; p < positions; ++p) {
            const double* row = m.raw() + (b * positions + p) * c.out_channels;
            for (std::size_t o = 0; o < c.out_channels; ++o) {
                y[(b * c.out_channels + o) * positions + p] = row[o];
            }
        }
    }
    return y;
}

Tensor pool_forward(const MaxPool& pool, const Tensor& x) {
    const std::size_t b = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3), k = pool.kernel;
    const std::size_t oh = h / k, ow = w / k;
    Tensor y({b, ch, oh, ow});
    for (std::size_t n = 0; n < b * ch; ++n) {
        const double* plane = x.raw() + n * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double best = plane[(i * k) * w + j * k];
                for (std::size_t di = 0; di < k; ++di) {
                    for (std::size_t dj = 0; dj < k; ++dj) {
                        best = std::max(best, plane[(i * k + di) * w + j * k + dj]);
                    }
                }
                y[(n * oh + i) * ow + j] = best;
            }
        }
    }
    return y;
}

}  // namespace

Tensor forward_layer(const Layer& layer, const Tensor& input) {
    return std::visit(overloaded{
                          [&](const Dense& d) {
                              if (input.size() % d.params.fan_in() != 0 || input.empty()) {
                                  throw DimensionError(fmt::format("{}: cannot apply to input {}",
                                                                   layer_name(layer), shape_string(input.shape())));
                              }
                              return detail::affine(input, d.params.weight, &d.params.bias);
                          },
                          [&](const Conv2d& c) { return conv_forward(c, input); },
                          [&](const MaxPool& p) { return pool_forward(p, input); },
                          [&](const ReLU&) {
                              Tensor y = input;
                              for (auto& v : y.data()) {
                                  v = v > 0.0 ? v : 0.0;
                              }
                              return y;
                          },
                          [&](const SoftmaxCrossEntropy&) { return input; },
                      },
                      layer);
}

namespace {

Tensor shaped_input(const Network& net, const Tensor& batch) {
    const std::size_t per_sample = shape_size(net.input_shape());
    if (batch.empty() || batch.rank() < 1 || batch.size() != batch.dim(0) * per_sample) {
        throw DimensionError(fmt::format("layer 0 ({}): batch {} does not match input shape {}",
                                         net.size() ? layer_name(net.layer(0)) : std::string("none"),
                                         shape_string(batch.shape()), shape_string(net.input_shape())));
    }
    Shape shape{batch.dim(0)};
    shape.insert(shape.end(), net.input_shape().begin(), net.input_shape().end());
    return batch.reshaped(std::move(shape));
}

}  // namespace

Activations forward(const Network& net, const Tensor& batch) {
    Activations acts;
    acts.reserve(net.size() + 1);
    acts.push_back(shaped_input(net, batch));
    for (std::size_t i = 0; i < net.size(); ++i) {
        acts.push_back(forward_layer(net.layer(i), acts.back()));
    }
    return acts;
}

Tensor infer(const Network& net, const Tensor& batch) {
    Tensor x = shaped_input(net, batch);
    for (const auto& layer : net.layers()) {
        x = forward_layer(layer, x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Loss and backward
// ---------------------------------------------------------------------------

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.size() / batch;
    if (labels.size() != batch) {
        throw DimensionError(fmt::format("{} labels for a batch of {}", labels.size(), batch));
    }
    if (grad != nullptr) {
        *grad = Tensor({batch, classes});
    }
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits.raw() + b * classes;
        const auto label = static_cast<std::size_t>(labels[b]);
        if (labels[b] < 0 || label >= classes) {
            throw DimensionError(fmt::format("label {} outside [0, {})", labels[b], classes));
        }
        const double peak = *std::max_element(row, row + classes);
        double sum = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
            sum += std::exp(row[k] - peak);
        }
        const double log_z = peak + std::log(sum);
        total += log_z - row[label];
        if (grad != nullptr) {
            double* g = grad->raw() + b * classes;
            for (std::size_t k = 0; k < classes; ++k) {
                g[k] = std::exp(row[k] - log_z) / static_cast<double>(batch);
            }
            g[label] -= 1.0 / static_cast<double>(batch);
        }
    }
    return total / static_cast<double>(batch);
}

namespace {

void param_grads(const ParamBlock& p, const Tensor& cols, const Tensor& dm, std::size_t rows, LayerGradient& out) {
    const std::size_t fan_in = p.fan_in();
    const std::size_t fan_out = p.fan_out();
    out.weight = Tensor({fan_in, fan_out});
    as_matrix(out.weight, fan_in, fan_out).noalias() =
        as_matrix(cols, rows, fan_in).transpose() * as_matrix(dm, rows, fan_out);
    out.bias = Tensor({fan_out});
    Eigen::Map<Eigen::RowVectorXd>(out.bias.raw(), static_cast<Eigen::Index>(fan_out)) =
        as_matrix(dm, rows, fan_out).colwise().sum();
    out.frozen = p.trainable.none();
}

Tensor input_grad(const ParamBlock& p, const Tensor& dm, std::size_t rows) {
    Tensor dx({rows, p.fan_in()});
    as_matrix(dx, rows, p.fan_in()).noalias() =
        as_matrix(dm, rows, p.fan_out()) * as_matrix(p.weight, p.fan_in(), p.fan_out()).transpose();
    return dx;
}

}  // namespace

Gradients backward(const Network& net, const Activations& acts, std::span<const int> labels,
                   BackwardOptions options) {
    if (acts.size() != net.size() + 1) {
        throw DimensionError(fmt::format("expected {} activations, got {}", net.size() + 1, acts.size()));
    }
    if (net.size() == 0 || !std::holds_alternative<SoftmaxCrossEntropy>(net.layers().back())) {
        throw std::invalid_argument("backward needs a SoftmaxCrossEntropy head");
    }
    const std::size_t batch = acts.front().dim(0);
    if (labels.size() != batch) {
        throw DimensionError(fmt::format("{} labels for a batch of {}", labels.size(), batch));
    }

    Gradients grads;
    grads.layers.resize(net.size());
    Tensor g;
    grads.loss = softmax_cross_entropy(acts.back(), labels, &g);

    for (std::size_t i = net.size(); i-- > 0;) {
        const Tensor& x = acts[i];
        auto& out = grads.layers[i];
        if (options.keep_output_grads) {
            out.output_grad = g;
        }
        const bool need_input = i > 0;
        Tensor dx;
        std::visit(overloaded{
                       [&](const Dense& d) {
                           const std::size_t rows = batch;
                           if (options.weight_gradients) {
                               param_grads(d.params, x, g, rows, out);
                           } else {
                               out.frozen = d.params.trainable.none();
                           }
                           if (need_input) {
                               dx = input_grad(d.params, g, rows);
                           }
                       },
                       [&](const Conv2d& c) {
                           const auto geo = conv_geometry(c, x);
                           const std::size_t positions = geo.out_h * geo.out_w;
                           const std::size_t rows = batch * positions;
                           Tensor dm({rows, c.out_channels});
                           for (std::size_t b = 0; b < batch; ++b) {
                               for (std::size_t o = 0; o < c.out_channels; ++o) {
                                   const double* src = g.raw() + (b * c.out_channels + o) * positions;
                                   for (std::size_t p = 0; p < positions; ++p) {
                                       dm[(b * positions + p) * c.out_channels + o] = src[p];
                                   }
                               }
                           }
                           const Tensor cols = im2col(x, geo);
                           if (options.weight_gradients) {
                               param_grads(c.params, cols, dm, rows, out);
                           } else {
                               out.frozen = c.params.trainable.none();
                           }
                           if (need_input) {
                               const Tensor dcols = input_grad(c.params, dm, rows);
                               dx = Tensor(x.shape());
                               col2im_add(dcols, geo, dx);
                           }
                       },
                       [&](const MaxPool& pool) {
                           if (!need_input) {
                               return;
                           }
                           const std::size_t ch = x.dim(1), h = x.dim(2), w = x.dim(3), k = pool.kernel;
                           const std::size_t oh = h / k, ow = w / k;
                           dx = Tensor(x.shape());
                           for (std::size_t n = 0; n < batch * ch; ++n) {
                               const double* plane = x.raw() + n * h * w;
                               for (std::size_t r = 0; r < oh; ++r) {
                                   for (std::size_t s = 0; s < ow; ++s) {
                                       std::size_t arg = (r * k) * w + s * k;
                                       for (std::size_t di = 0; di < k; ++di) {
                                           for (std::size_t dj = 0; dj < k; ++dj) {
                                               const std::size_t pos = (r * k + di) * w + s * k + dj;
                                               if (plane[pos] > plane[arg]) {
                                                   arg = pos;
                                               }
                                           }
                                       }
                                       dx[n * h * w + arg] += g[(n * oh + r) * ow + s];
                                   }
                               }
                           }
                       },
                       [&](const ReLU&) {
                           if (!need_input) {
                               return;
                           }
                           dx = Tensor(x.shape());
                           for (std::size_t k = 0; k < x.size(); ++k) {
                               dx[k] = x[k] > 0.0 ? g[k] : 0.0;
                           }
                       },
                       [&](const SoftmaxCrossEntropy&) {
                           if (need_input) {
                               dx = g;
                           }
                       },
                   },
                   net.layer(i));
        if (need_input) {
            dx.reshape(x.shape());
            g = std::move(dx);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

namespace {

void momentum_update(Tensor& value, Tensor& velocity, const Tensor& grad, const Mask* trainable,
                     const SgdConfig& cfg) {
    if (velocity.size() != value.size()) {
        velocity = Tensor(value.shape());
    }
    for (std::size_t k = 0; k < value.size(); ++k) {
        if (trainable != nullptr && !(*trainable)[k]) {
            continue;
        }
        velocity[k] = cfg.momentum * velocity[k] + grad[k];
        value[k] -= cfg.learning_rate * velocity[k];
    }
}

}  // namespace

void sgd_step(Network& net, const Gradients& grads, const SgdConfig& cfg) {
    if (grads.layers.size() != net.size()) {
        throw DimensionError(fmt::format("gradients for {} layers, network has {}", grads.layers.size(), net.size()));
    }
    for (auto i : net.weight_layers()) {
        auto& p = net.params(i);
        const auto& g = grads.layers[i];
        if (!g.weight.empty()) {
            if (g.weight.shape() != p.weight.shape()) {
                throw DimensionError(fmt::format("layer {}: gradient {} vs weight {}", i,
                                                 shape_string(g.weight.shape()), shape_string(p.weight.shape())));
            }
            if (!p.trainable.none()) {
                momentum_update(p.weight, p.weight_velocity, g.weight, &p.trainable, cfg);
            }
            for (std::size_t k = 0; k < p.weight.size(); ++k) {
                if (!p.sparsity[k]) {
                    p.weight[k] = 0.0;
                    if (!p.weight_velocity.empty()) {
                        p.weight_velocity[k] = 0.0;
                    }
                }
            }
        }
        if (!g.bias.empty() && p.bias_trainable) {
            momentum_update(p.bias, p.bias_velocity, g.bias, nullptr, cfg);
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation, gradient check, training loop
// ---------------------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.size() / batch;
    std::vector<int> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits.raw() + b * classes;
        out[b] = static_cast<int>(std::max_element(row, row + classes) - row);
    }
    return out;
}

double evaluate(const Network& net, const Dataset& data, std::size_t batch_size) {
    if (data.empty()) {
        throw std::invalid_argument("cannot evaluate on an empty dataset");
    }
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(data.size(), begin + batch_size);
        const auto pred = argmax_rows(infer(net, data.batch_range(begin, end)));
        for (std::size_t k = 0; k < pred.size(); ++k) {
            correct += pred[k] == data.labels[begin + k] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double gradient_check(const Network& net, const Tensor& batch, std::span<const int> labels, double eps,
                      RngStream& rng, std::size_t samples) {
    const Gradients analytic = backward(net, forward(net, batch), labels);

    struct Site {
        std::size_t layer;
        bool bias;
        std::size_t index;
    };
    std::vector<Site> sites;
    for (auto i : net.weight_layers()) {
        const auto& p = net.params(i);
        for (std::size_t k = 0; k < p.weight.size(); ++k) {
            sites.push_back({i, false, k});
        }
        for (std::size_t k = 0; k < p.bias.size(); ++k) {
            sites.push_back({i, true, k});
        }
    }
    if (sites.size() > samples) {
        for (std::size_t k = 0; k < samples; ++k) {
            std::swap(sites[k], sites[k + rng.index(sites.size() - k)]);
        }
        sites.resize(samples);
    }

    Network probe = net;
    double worst = 0.0;
    for (const auto& s : sites) {
        auto& p = probe.params(s.layer);
        double& value = s.bias ? p.bias[s.index] : p.weight[s.index];
        const double saved = value;
        value = saved + eps;
        const double up = softmax_cross_entropy(infer(probe, batch), labels);
        value = saved - eps;
        const double down = softmax_cross_entropy(infer(probe, batch), labels);
        value = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const auto& g = analytic.layers[s.layer];
        const double exact = s.bias ? g.bias[s.index] : g.weight[s.index];
        const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
    return worst;
}

EpochStats train_epoch(Network& net, const Dataset& data, const SgdConfig& cfg, RngStream& shuffle) {
    cfg.validate();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(std::span<std::size_t>(order));

    EpochStats stats;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + begin, end - begin);
        const auto labels = data.batch_labels(idx);
        const auto acts = forward(net, data.batch(idx));
        const auto pred = argmax_rows(acts.back());
        for (std::size_t k = 0; k < pred.size(); ++k) {
            correct += pred[k] == labels[k] ? 1 : 0;
        }
        const auto grads = backward(net, acts, labels);
        stats.loss += grads.loss * static_cast<double>(idx.size());
        sgd_step(net, grads, cfg);
    }
    stats.loss /= static_cast<double>(data.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return stats;
}

}  // namespace xbarnet
