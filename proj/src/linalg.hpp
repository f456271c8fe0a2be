#pragma once

#include <Eigen/Core>

#include "xbarnet/tensor.hpp"

namespace xbarnet::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstRowVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

inline MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
    return {t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
    return {t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

/// y = x W (+ b) for x viewed as [batch, fan_in]. Shared by the network
/// engine and the crossbar read path so both produce identical bits.
inline Tensor affine(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    const std::size_t fan_in = weight.dim(0);
    const std::size_t fan_out = weight.dim(1);
    const std::size_t batch = x.size() / fan_in;
    Tensor y({batch, fan_out});
    auto ym = as_matrix(y, batch, fan_out);
    ym.noalias() = as_matrix(x, batch, fan_in) * as_matrix(weight, fan_in, fan_out);
    if (bias != nullptr) {
        ym.rowwise() += ConstRowVectorMap(bias->raw(), static_cast<Eigen::Index>(fan_out));
    }
    return y;
}

}  // namespace xbarnet::detail
