#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xbarnet/data.hpp"
#include "xbarnet/rng.hpp"
#include "xbarnet/tensor.hpp"

namespace xbarnet {

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t epochs = 10;

    void validate() const;
};

/// Trainable state of a dense or convolution layer.
///
/// The weight is always a [fan_in, fan_out] matrix and layers compute
/// y = x W + b. For convolutions fan_in is in_channels * k * k with rows
/// ordered (channel, kernel row, kernel col), so every weight tensor maps
/// onto a crossbar the same way.
///
/// Invariants: both masks have the weight's shape; a weight whose sparsity
/// bit is 0 is exactly 0.0; a weight whose trainable bit is 0 is never
/// written by the optimizer.
struct ParamBlock {
    Tensor weight;
    Tensor bias;
    Mask trainable;
    Mask sparsity;
    bool bias_trainable = true;
    Tensor weight_velocity;  // empty until the first momentum step
    Tensor bias_velocity;

    ParamBlock() = default;
    ParamBlock(std::size_t fan_in, std::size_t fan_out);

    std::size_t fan_in() const { return weight.dim(0); }
    std::size_t fan_out() const { return weight.dim(1); }

    /// Installs a sparsity mask and zeroes the weights it removes.
    void set_sparsity(Mask mask);
    void set_trainable(Mask mask);
    void apply_sparsity();
    void reset_velocity();
};

struct Dense {
    ParamBlock params;
};

struct Conv2d {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    ParamBlock params;
};

/// Non-overlapping max pooling (window and stride both `kernel`).
struct MaxPool {
    std::size_t kernel = 2;
};

struct ReLU {};

/// Loss head. Forward passes logits through unchanged; backward starts the
/// softmax cross-entropy gradient (mean over the batch). Must be last.
struct SoftmaxCrossEntropy {};

using Layer = std::variant<Dense, Conv2d, MaxPool, ReLU, SoftmaxCrossEntropy>;

Layer make_dense(std::size_t in, std::size_t out);
Layer make_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1);
std::string layer_name(const Layer& layer);

class Network {
public:
    Network() = default;
    /// `input_shape` is the per-sample shape, e.g. {784} or {1, 28, 28}.
    /// Throws DimensionError naming the first incompatible layer.
    Network(Shape input_shape, std::vector<Layer> layers, std::string rng_label = "init");

    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::string& rng_label() const noexcept { return rng_label_; }

    std::size_t size() const noexcept { return layers_.size(); }
    std::vector<Layer>& layers() noexcept { return layers_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    Layer& layer(std::size_t i) { return layers_.at(i); }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }

    /// Per-sample input shape of layer i; i == size() gives the logits shape.
    const Shape& shape_before(std::size_t i) const { return shapes_.at(i); }

    /// Indices of the Dense/Conv2d layers, in order.
    std::vector<std::size_t> weight_layers() const;
    bool has_params(std::size_t i) const;
    ParamBlock& params(std::size_t i);
    const ParamBlock& params(std::size_t i) const;

    std::size_t num_classes() const;
    /// Weight entries with sparsity bit 1 (biases excluded).
    std::size_t weight_count() const;
    /// Weight entries regardless of masks.
    std::size_t dense_weight_count() const;
    std::size_t bias_count() const;

    /// Recomputes the shape chain after a structural edit.
    void validate();

private:
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::vector<Shape> shapes_;
    std::string rng_label_ = "init";
};

/// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
void init_he_uniform(Network& net, RngStream& rng);

/// widths = {inputs, hidden..., classes}; ReLU between layers.
Network make_mlp(std::span<const std::size_t> widths, RngStream& rng);

/// LeNet-5-like CNN for 1x28x28 inputs: conv(6,5)-pool-conv(16,5)-pool-120-84-10.
Network make_lenet5(RngStream& rng);

/// activations[0] is the input batch, activations[i + 1] the output of layer i.
using Activations = std::vector<Tensor>;

Activations forward(const Network& net, const Tensor& batch);
/// Logits only, without keeping intermediate activations.
Tensor infer(const Network& net, const Tensor& batch);
Tensor forward_layer(const Layer& layer, const Tensor& input);

struct LayerGradient {
    Tensor weight;       // empty for parameter-free layers or when skipped
    Tensor bias;
    Tensor output_grad;  // dLoss/d(layer output), kept on request
    bool frozen = false; // every trainable bit is 0
};

struct Gradients {
    std::vector<LayerGradient> layers;
    double loss = 0.0;
};

struct BackwardOptions {
    bool weight_gradients = true;
    bool keep_output_grads = false;
};

/// Softmax cross-entropy averaged over the batch. Writes dLoss/dlogits when
/// `grad` is non-null.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

Gradients backward(const Network& net, const Activations& activations, std::span<const int> labels,
                   BackwardOptions options = {});

/// Momentum SGD restricted to trainable entries, then re-applies sparsity.
void sgd_step(Network& net, const Gradients& grads, const SgdConfig& cfg);

/// Arg-max class per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

/// Fraction of correctly classified samples.
double evaluate(const Network& net, const Dataset& data, std::size_t batch_size = 1000);

/// Worst relative error between analytic and central-difference gradients
/// over up to `samples` randomly chosen parameters (all of them when the
/// network has fewer). Relative error is |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(const Network& net, const Tensor& batch, std::span<const int> labels, double eps,
                      RngStream& rng, std::size_t samples = 200);

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// One shuffled pass over `data`.
EpochStats train_epoch(Network& net, const Dataset& data, const SgdConfig& cfg, RngStream& shuffle);

}  // namespace xbarnet
