/**
 * @file layers.hpp
 * @brief Minimal reverse-mode layers on Eigen matrices.
 *
 * forward() caches what backward() needs; backward() returns the input
 * gradient and accumulates parameter gradients unless `param_grads` is off
 * (inversion only needs input gradients). Templated on the scalar so the
 * same code runs in float for training and in double for gradient checks.
 */
#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vaednn/nn/tensor.hpp"

namespace vaednn::nn {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix<T> forward(const Matrix<T>& x) = 0;
  virtual Matrix<T> backward(const Matrix<T>& dy) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  virtual void initialize(std::mt19937_64& /*rng*/) {}
  virtual Shape3 input_shape() const = 0;
  virtual Shape3 output_shape() const = 0;
  /// Name in the architecture listing, e.g. "Conv2D".
  virtual std::string kind() const = 0;
  virtual std::string activation() const { return "..."; }
  virtual std::string kernel() const { return "..."; }

  bool param_grads = true;
};

/// y = x W + b, W stored (in, out).
template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(int in, int out);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight, &bias}; }
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return {in_, 1, 1}; }
  Shape3 output_shape() const override { return {out_, 1, 1}; }
  std::string kind() const override { return "Dense"; }
  std::string activation() const override { return "Linear"; }

  Parameter<T> weight, bias;

 private:
  int in_, out_;
  Matrix<T> x_;
};

template <class T>
class Tanh final : public Layer<T> {
 public:
  explicit Tanh(Shape3 shape) : shape_(shape) {}
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  Shape3 input_shape() const override { return shape_; }
  Shape3 output_shape() const override { return shape_; }
  std::string kind() const override { return "Tanh"; }

 private:
  Shape3 shape_;
  Matrix<T> y_;
};

/// Zeroes inactive cells in every channel; the mask is (H*W) of 0/1.
template <class T>
class MaskLayer final : public Layer<T> {
 public:
  MaskLayer(Shape3 shape, const std::vector<unsigned char>& cell_mask);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  Shape3 input_shape() const override { return shape_; }
  Shape3 output_shape() const override { return shape_; }
  std::string kind() const override { return "Mask"; }

 private:
  Shape3 shape_;
  RowVector<T> mask_;
};

/// Shape bookkeeping only; the flat layout is unchanged.
template <class T>
class Reshape final : public Layer<T> {
 public:
  Reshape(Shape3 in, Shape3 out) : in_(in), out_(out) {}
  Matrix<T> forward(const Matrix<T>& x) override { return x; }
  Matrix<T> backward(const Matrix<T>& dy) override { return dy; }
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return "Reshape"; }

 private:
  Shape3 in_, out_;
};

/// For every output position and every (channel, ky, kx) tap, the flat input
/// index it reads, or -1 for padding. Row r = (c*k + ky)*k + kx, column o.
struct PatchTable {
  Shape3 in;
  int k = 1, stride = 1, pad = 0;
  int out_h = 0, out_w = 0;
  std::vector<int> index;  // (in.c*k*k) x (out_h*out_w)

  int rows() const noexcept { return in.c * k * k; }
  int positions() const noexcept { return out_h * out_w; }
};
PatchTable make_patch_table(Shape3 in, int k, int stride, int pad, int out_h, int out_w);

/// Cross-correlation, weight (C_out, C_in*k*k).
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(Shape3 in, int out_channels, int k, int stride = 1, int pad = -1 /* same */);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight, &bias}; }
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return "Conv2D"; }
  std::string kernel() const override { return "(" + std::to_string(table_.k) + ", " + std::to_string(table_.k) + ")"; }

  Parameter<T> weight, bias;

 private:
  Shape3 in_, out_;
  PatchTable table_;
  Matrix<T> cols_;
};

/// Adjoint of a strided convolution from the output grid back to the input
/// grid; weight (C_in, C_out*k*k) as in the usual transposed-conv layout.
template <class T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(Shape3 in, int out_channels, int k, int stride, int pad, int output_pad);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight, &bias}; }
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return "ConvTranspose2D"; }
  std::string kernel() const override { return "(" + std::to_string(table_.k) + ", " + std::to_string(table_.k) + ")"; }

  Parameter<T> weight, bias;

 private:
  Shape3 in_, out_;
  PatchTable table_;  // over the (big) output grid
  Matrix<T> x_;       // (C_in, B*P) channel-major copy of the input
};

enum class PoolKind { average, max };

/// 2x2 window, stride 2.
template <class T>
class Pool2d final : public Layer<T> {
 public:
  Pool2d(Shape3 in, PoolKind kind);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return kind_ == PoolKind::average ? "AvgPool2D" : "MaxPool2D"; }
  std::string kernel() const override { return "(2, 2)"; }

 private:
  Shape3 in_, out_;
  PoolKind kind_;
  std::vector<int> argmax_;
  long batch_ = 0;
};

/// 1x1 convolution: channel mixing at every grid point, weight (C_out, C_in).
template <class T>
class PointwiseConv final : public Layer<T> {
 public:
  PointwiseConv(Shape3 in, int out_channels, bool bias = true);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override;
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return "Pointwise"; }

  Parameter<T> weight, bias;

 private:
  Shape3 in_, out_;
  bool has_bias_;
  Matrix<T> x_;
};

template <class T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <class L, class... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  /// Appends a Tanh matching the current output shape.
  void add_tanh() { add<Tanh<T>>(output_shape()); }

  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy);
  std::vector<Parameter<T>*> parameters();
  void initialize(std::mt19937_64& rng);
  void set_param_grads(bool on);
  void zero_grad();

  Shape3 input_shape() const { return layers_.front()->input_shape(); }
  Shape3 output_shape() const { return layers_.back()->output_shape(); }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <class T>
std::size_t parameter_count(const std::vector<Parameter<T>*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

/// Uniform(-bound, bound) fill.
template <class T>
void uniform_fill(Matrix<T>& m, T bound, std::mt19937_64& rng);

}  // namespace vaednn::nn
