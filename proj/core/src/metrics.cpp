#include "vaednn/metrics.hpp"

#include <cmath>

namespace vaednn {

template <class T>
double relative_l2(const NdArray<T>& pred, const NdArray<T>& ref, const ActiveMask& mask) {
  if (pred.shape() != ref.shape()) {
    throw Error(ErrorKind::shape_mismatch, "relative_l2: " + shape_string(pred.shape()) + " vs " + shape_string(ref.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  const auto r = ref.rank();
  if (r < 2 || ref.dim(r - 2) != static_cast<std::size_t>(mask.n_x1()) ||
      ref.dim(r - 1) != static_cast<std::size_t>(mask.n_x2())) {
    throw Error(ErrorKind::shape_mismatch, "relative_l2: trailing axes do not match the mask");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    if (!mask.flat_active(k % plane)) continue;
    const double d = static_cast<double>(pred[k]) - static_cast<double>(ref[k]);
    num += d * d;
    den += static_cast<double>(ref[k]) * static_cast<double>(ref[k]);
  }
  if (!(den > 0.0)) throw Error(ErrorKind::zero_reference, "relative_l2: reference is zero on every active cell");
  return std::sqrt(num / den);
}

template double relative_l2(const NdArray<float>&, const NdArray<float>&, const ActiveMask&);
template double relative_l2(const NdArray<double>&, const NdArray<double>&, const ActiveMask&);

}  // namespace vaednn
