#pragma once

#include <string>

#include <Eigen/Dense>

namespace vaednn::nn {

/// Activations are (batch, features) row-major; a sample's features are laid
/// out channel-major as (C, H, W).
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct Shape3 {
  int c = 1;
  int h = 1;
  int w = 1;
  int size() const noexcept { return c * h * w; }
  int plane() const noexcept { return h * w; }
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    if (h == 1 && w == 1) return "(" + std::to_string(c) + ",)";
    return "(" + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
  }
};

}  // namespace vaednn::nn
