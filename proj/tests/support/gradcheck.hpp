#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vaednn/nn/layers.hpp"

namespace vaednn::testing {

using Md = nn::Matrix<double>;

inline Md random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Md m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

/// Worst relative disagreement between an analytic gradient and central
/// differences of `f` over (at most `max_probe`) entries of `x`. The
/// denominator floors at `floor` so vanishing components compare absolutely.
inline double fd_mismatch(const std::function<double()>& f, Md& x, const Md& analytic, double h = 1e-5,
                          int max_probe = 60, double floor = 1e-6) {
  double worst = 0.0;
  const Eigen::Index n = x.size();
  const Eigen::Index step = std::max<Eigen::Index>(1, n / max_probe);
  for (Eigen::Index k = 0; k < n; k += step) {
    const double saved = x.data()[k];
    x.data()[k] = saved + h;
    const double fp = f();
    x.data()[k] = saved - h;
    const double fm = f();
    x.data()[k] = saved;
    const double num = (fp - fm) / (2 * h);
    const double a = analytic.data()[k];
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
  }
  return worst;
}

/// Checks input and parameter gradients of a layer under the scalar loss
/// sum(g * layer(x)). Returns the worst relative mismatch.
inline double layer_gradcheck(nn::Layer<double>& layer, int batch, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  layer.initialize(rng);
  // Perturb weights away from the init pattern (e.g. zero biases).
  for (auto* p : layer.parameters()) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.1);
  Md x = random_matrix(batch, layer.input_shape().size(), rng);
  const Md g = random_matrix(batch, layer.output_shape().size(), rng);
  auto loss = [&] { return (layer.forward(x).array() * g.array()).sum(); };

  for (auto* p : layer.parameters()) p->zero_grad();
  layer.forward(x);
  const Md dx = layer.backward(g);
  std::vector<Md> grads;
  for (auto* p : layer.parameters()) grads.push_back(p->grad);

  double worst = fd_mismatch(loss, x, dx);
  auto params = layer.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) worst = std::max(worst, fd_mismatch(loss, params[i]->value, grads[i]));
  return worst;
}

}  // namespace vaednn::testing
