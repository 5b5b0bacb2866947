#pragma once

#include <Eigen/Core>

namespace volcnn::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Column block of a wider row-major matrix.
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace volcnn::detail
