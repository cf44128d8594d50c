#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "hrvit/tensor.hpp"

namespace hrvit::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int normalize_axis(int axis, int rank);
Shape contiguous_strides(const Shape& shape);

/// Product of extents in [begin, end).
std::int64_t extent_product(const Shape& shape, int begin, int end);

/// Accumulates `g` into input `index` of `self` when that input wants a gradient.
inline bool wants_grad(const Tensor::Node& self, std::size_t index) {
  return index < self.inputs.size() && self.inputs[index]->requires_grad;
}

}  // namespace hrvit::detail
