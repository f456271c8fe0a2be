#include "xbarnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

namespace xbarnet {

std::size_t shape_size(const Shape& shape) {
    if (shape.empty()) {
        return 0;
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError(fmt::format("tensor shape {} needs {} values, got {}",
                                         shape_string(shape_), shape_size(shape_), data_.size()));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape_)));
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col) {
    return data_[row * shape_[1] + col];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return data_[row * shape_[1] + col];
}

void Tensor::reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
        throw DimensionError(fmt::format("cannot reshape {} to {}", shape_string(shape_), shape_string(shape)));
    }
    shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor copy = *this;
    copy.reshape(std::move(shape));
    return copy;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(Shape shape, bool value)
    : shape_(std::move(shape)), bits_(shape_size(shape_), value ? 1 : 0) {}

bool Mask::at(std::size_t row, std::size_t col) const {
    return bits_[row * shape_[1] + col] != 0;
}

void Mask::set(std::size_t row, std::size_t col, bool value) {
    bits_[row * shape_[1] + col] = value ? 1 : 0;
}

std::size_t Mask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double Mask::density() const noexcept {
    return bits_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(bits_.size());
}

}  // namespace xbarnet
