/**
 * @file metrics.hpp
 * @brief Relative l2 error over active cells.
 */
#pragma once

#include "vaednn/domain.hpp"
#include "vaednn/ndarray.hpp"

namespace vaednn {

/// sqrt(sum (pred - ref)^2 / sum ref^2) over active cells of every trailing
/// (n1, n2) plane. Throws shape-mismatch, or zero-reference when ref is 0
/// on every active cell.
template <class T>
double relative_l2(const NdArray<T>& pred, const NdArray<T>& ref, const ActiveMask& mask);

}  // namespace vaednn
