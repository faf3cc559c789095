#pragma once

#include <cmath>
#include <vector>

#include "vaednn/nn/layers.hpp"

namespace vaednn::nn {

/// Adam with bias correction; state is kept per parameter in registration order.
template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, t_));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
      params_[i]->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  long steps() const noexcept { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Matrix<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace vaednn::nn
