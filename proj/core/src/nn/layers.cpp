#include "vaednn/nn/layers.hpp"

#include <cmath>
#include <limits>

#include "vaednn/error.hpp"

namespace vaednn::nn {

template <class T>
void uniform_fill(Matrix<T>& m, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-static_cast<double>(bound), static_cast<double>(bound));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
}

namespace {

template <class T>
void init_param(Parameter<T>& p, std::string name, Eigen::Index rows, Eigen::Index cols) {
  p.name = std::move(name);
  p.value = Matrix<T>::Zero(rows, cols);
  p.grad = Matrix<T>::Zero(rows, cols);
}

void check_width(Eigen::Index got, int want, const char* what) {
  if (got != want) {
    throw Error(ErrorKind::shape_mismatch, std::string(what) + ": expected " + std::to_string(want) +
                                               " features per sample, got " + std::to_string(got));
  }
}

}  // namespace

// ---------------------------------------------------------------- Dense

template <class T>
Dense<T>::Dense(int in, int out) : in_(in), out_(out) {
  init_param(weight, "weight", in, out);
  init_param(bias, "bias", 1, out);
}

template <class T>
void Dense<T>::initialize(std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(in_));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

template <class T>
Matrix<T> Dense<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), in_, "Dense");
  x_ = x;
  Matrix<T> y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

template <class T>
Matrix<T> Dense<T>::backward(const Matrix<T>& dy) {
  if (this->param_grads) {
    weight.grad.noalias() += x_.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
  }
  return dy * weight.value.transpose();
}

// ---------------------------------------------------------------- Tanh / Mask

template <class T>
Matrix<T> Tanh<T>::forward(const Matrix<T>& x) {
  y_ = x.array().tanh().matrix();
  return y_;
}

template <class T>
Matrix<T> Tanh<T>::backward(const Matrix<T>& dy) {
  return (dy.array() * (T(1) - y_.array().square())).matrix();
}

template <class T>
MaskLayer<T>::MaskLayer(Shape3 shape, const std::vector<unsigned char>& cell_mask) : shape_(shape) {
  if (static_cast<int>(cell_mask.size()) != shape.plane()) {
    throw Error(ErrorKind::shape_mismatch, "mask size does not match the layer grid");
  }
  mask_.resize(shape.size());
  for (int c = 0; c < shape.c; ++c)
    for (int q = 0; q < shape.plane(); ++q) mask_[c * shape.plane() + q] = cell_mask[static_cast<std::size_t>(q)] ? T(1) : T(0);
}

template <class T>
Matrix<T> MaskLayer<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), shape_.size(), "Mask");
  return (x.array().rowwise() * mask_.array()).matrix();
}

template <class T>
Matrix<T> MaskLayer<T>::backward(const Matrix<T>& dy) {
  return (dy.array().rowwise() * mask_.array()).matrix();
}

// ---------------------------------------------------------------- patches

PatchTable make_patch_table(Shape3 in, int k, int stride, int pad, int out_h, int out_w) {
  PatchTable t;
  t.in = in;
  t.k = k;
  t.stride = stride;
  t.pad = pad;
  t.out_h = out_h;
  t.out_w = out_w;
  const int p = out_h * out_w;
  t.index.assign(static_cast<std::size_t>(t.rows()) * static_cast<std::size_t>(p), -1);
  for (int c = 0; c < in.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int r = (c * k + ky) * k + kx;
        for (int oy = 0; oy < out_h; ++oy)
          for (int ox = 0; ox < out_w; ++ox) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
            t.index[static_cast<std::size_t>(r) * p + oy * out_w + ox] = (c * in.h + iy) * in.w + ix;
          }
      }
  return t;
}

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(Shape3 in, int out_channels, int k, int stride, int pad) : in_(in) {
  if (pad < 0) pad = (k - 1) / 2;
  const int oh = (in.h + 2 * pad - k) / stride + 1;
  const int ow = (in.w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw Error(ErrorKind::shape_mismatch, "Conv2d kernel larger than the padded input");
  out_ = {out_channels, oh, ow};
  table_ = make_patch_table(in, k, stride, pad, oh, ow);
  init_param(weight, "weight", out_channels, table_.rows());
  init_param(bias, "bias", 1, out_channels);
}

template <class T>
void Conv2d<T>::initialize(std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(table_.rows()));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

template <class T>
Matrix<T> Conv2d<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), in_.size(), "Conv2d");
  const Eigen::Index batch = x.rows();
  const int p = table_.positions();
  const int kk = table_.rows();
  cols_.resize(kk, batch * p);
  for (int r = 0; r < kk; ++r) {
    const int* idx = table_.index.data() + static_cast<std::size_t>(r) * p;
    T* dst = cols_.row(r).data();
    for (Eigen::Index b = 0; b < batch; ++b) {
      const T* src = x.row(b).data();
      T* d = dst + b * p;
      for (int o = 0; o < p; ++o) d[o] = idx[o] >= 0 ? src[idx[o]] : T(0);
    }
  }
  const Matrix<T> y = weight.value * cols_;
  Matrix<T> out(batch, out_.size());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int co = 0; co < out_.c; ++co)
      out.row(b).segment(co * p, p) = y.row(co).segment(b * p, p).array() + bias.value(0, co);
  return out;
}

template <class T>
Matrix<T> Conv2d<T>::backward(const Matrix<T>& dy) {
  const Eigen::Index batch = dy.rows();
  const int p = table_.positions();
  const int kk = table_.rows();
  Matrix<T> g(out_.c, batch * p);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int co = 0; co < out_.c; ++co) g.row(co).segment(b * p, p) = dy.row(b).segment(co * p, p);
  if (this->param_grads) {
    weight.grad.noalias() += g * cols_.transpose();
    bias.grad.row(0) += g.rowwise().sum().transpose();
  }
  const Matrix<T> dcols = weight.value.transpose() * g;
  Matrix<T> dx = Matrix<T>::Zero(batch, in_.size());
  for (int r = 0; r < kk; ++r) {
    const int* idx = table_.index.data() + static_cast<std::size_t>(r) * p;
    const T* src = dcols.row(r).data();
    for (Eigen::Index b = 0; b < batch; ++b) {
      T* d = dx.row(b).data();
      const T* s = src + b * p;
      for (int o = 0; o < p; ++o)
        if (idx[o] >= 0) d[idx[o]] += s[o];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ConvTranspose2d

template <class T>
ConvTranspose2d<T>::ConvTranspose2d(Shape3 in, int out_channels, int k, int stride, int pad, int output_pad)
    : in_(in) {
  const int oh = (in.h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (in.w - 1) * stride - 2 * pad + k + output_pad;
  if (oh <= 0 || ow <= 0) throw Error(ErrorKind::shape_mismatch, "ConvTranspose2d produces an empty output");
  out_ = {out_channels, oh, ow};
  table_ = make_patch_table(out_, k, stride, pad, in.h, in.w);
  init_param(weight, "weight", in.c, table_.rows());
  init_param(bias, "bias", 1, out_channels);
}

template <class T>
void ConvTranspose2d<T>::initialize(std::mt19937_64& rng) {
  // fan-in convention of the weight's second axis (C_out * k * k)
  const T bound = T(1) / std::sqrt(static_cast<T>(table_.rows()));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

template <class T>
Matrix<T> ConvTranspose2d<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), in_.size(), "ConvTranspose2d");
  const Eigen::Index batch = x.rows();
  const int p = table_.positions();  // small grid
  const int kk = table_.rows();
  x_.resize(in_.c, batch * p);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int ci = 0; ci < in_.c; ++ci) x_.row(ci).segment(b * p, p) = x.row(b).segment(ci * p, p);
  const Matrix<T> cols = weight.value.transpose() * x_;
  Matrix<T> out = Matrix<T>::Zero(batch, out_.size());
  for (int r = 0; r < kk; ++r) {
    const int* idx = table_.index.data() + static_cast<std::size_t>(r) * p;
    const T* src = cols.row(r).data();
    for (Eigen::Index b = 0; b < batch; ++b) {
      T* d = out.row(b).data();
      const T* s = src + b * p;
      for (int o = 0; o < p; ++o)
        if (idx[o] >= 0) d[idx[o]] += s[o];
    }
  }
  const int big = out_.plane();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int co = 0; co < out_.c; ++co) out.row(b).segment(co * big, big).array() += bias.value(0, co);
  return out;
}

template <class T>
Matrix<T> ConvTranspose2d<T>::backward(const Matrix<T>& dy) {
  const Eigen::Index batch = dy.rows();
  const int p = table_.positions();
  const int kk = table_.rows();
  Matrix<T> dcols(kk, batch * p);
  for (int r = 0; r < kk; ++r) {
    const int* idx = table_.index.data() + static_cast<std::size_t>(r) * p;
    T* dst = dcols.row(r).data();
    for (Eigen::Index b = 0; b < batch; ++b) {
      const T* src = dy.row(b).data();
      T* d = dst + b * p;
      for (int o = 0; o < p; ++o) d[o] = idx[o] >= 0 ? src[idx[o]] : T(0);
    }
  }
  if (this->param_grads) {
    weight.grad.noalias() += x_ * dcols.transpose();
    const int big = out_.plane();
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int co = 0; co < out_.c; ++co) bias.grad(0, co) += dy.row(b).segment(co * big, big).sum();
  }
  const Matrix<T> dxc = weight.value * dcols;
  Matrix<T> dx(batch, in_.size());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int ci = 0; ci < in_.c; ++ci) dx.row(b).segment(ci * p, p) = dxc.row(ci).segment(b * p, p);
  return dx;
}

// ---------------------------------------------------------------- Pool2d

template <class T>
Pool2d<T>::Pool2d(Shape3 in, PoolKind kind) : in_(in), kind_(kind) {
  if (in.h % 2 || in.w % 2) throw Error(ErrorKind::shape_mismatch, "2x2 pooling needs even spatial sizes");
  out_ = {in.c, in.h / 2, in.w / 2};
}

template <class T>
Matrix<T> Pool2d<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), in_.size(), "Pool2d");
  batch_ = x.rows();
  Matrix<T> out(batch_, out_.size());
  if (kind_ == PoolKind::max) argmax_.assign(static_cast<std::size_t>(batch_ * out_.size()), 0);
  for (Eigen::Index b = 0; b < batch_; ++b) {
    const T* src = x.row(b).data();
    T* dst = out.row(b).data();
    for (int c = 0; c < in_.c; ++c)
      for (int i = 0; i < out_.h; ++i)
        for (int j = 0; j < out_.w; ++j) {
          const int base = (c * in_.h + 2 * i) * in_.w + 2 * j;
          const int taps[4] = {base, base + 1, base + in_.w, base + in_.w + 1};
          const int o = (c * out_.h + i) * out_.w + j;
          if (kind_ == PoolKind::average) {
            dst[o] = T(0.25) * (src[taps[0]] + src[taps[1]] + src[taps[2]] + src[taps[3]]);
          } else {
            int best = taps[0];
            for (int t = 1; t < 4; ++t)
              if (src[taps[t]] > src[best]) best = taps[t];
            dst[o] = src[best];
            argmax_[static_cast<std::size_t>(b * out_.size() + o)] = best;
          }
        }
  }
  return out;
}

template <class T>
Matrix<T> Pool2d<T>::backward(const Matrix<T>& dy) {
  Matrix<T> dx = Matrix<T>::Zero(dy.rows(), in_.size());
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    const T* g = dy.row(b).data();
    T* d = dx.row(b).data();
    for (int c = 0; c < in_.c; ++c)
      for (int i = 0; i < out_.h; ++i)
        for (int j = 0; j < out_.w; ++j) {
          const int o = (c * out_.h + i) * out_.w + j;
          if (kind_ == PoolKind::average) {
            const int base = (c * in_.h + 2 * i) * in_.w + 2 * j;
            const T v = T(0.25) * g[o];
            d[base] += v;
            d[base + 1] += v;
            d[base + in_.w] += v;
            d[base + in_.w + 1] += v;
          } else {
            d[argmax_[static_cast<std::size_t>(b * out_.size() + o)]] += g[o];
          }
        }
  }
  return dx;
}

// ---------------------------------------------------------------- PointwiseConv

template <class T>
PointwiseConv<T>::PointwiseConv(Shape3 in, int out_channels, bool with_bias)
    : in_(in), out_{out_channels, in.h, in.w}, has_bias_(with_bias) {
  init_param(weight, "weight", out_channels, in.c);
  init_param(bias, "bias", 1, with_bias ? out_channels : 0);
}

template <class T>
std::vector<Parameter<T>*> PointwiseConv<T>::parameters() {
  if (has_bias_) return {&weight, &bias};
  return {&weight};
}

template <class T>
void PointwiseConv<T>::initialize(std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(in_.c));
  uniform_fill(weight.value, bound, rng);
  if (has_bias_) uniform_fill(bias.value, bound, rng);
}

template <class T>
Matrix<T> PointwiseConv<T>::forward(const Matrix<T>& x) {
  check_width(x.cols(), in_.size(), "PointwiseConv");
  using Map = Eigen::Map<Matrix<T>>;
  using CMap = Eigen::Map<const Matrix<T>>;
  x_ = x;
  const int p = in_.plane();
  Matrix<T> out(x.rows(), out_.size());
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    Map ob(out.row(b).data(), out_.c, p);
    ob.noalias() = weight.value * CMap(x.row(b).data(), in_.c, p);
    if (has_bias_) ob.colwise() += bias.value.row(0).transpose();
  }
  return out;
}

template <class T>
Matrix<T> PointwiseConv<T>::backward(const Matrix<T>& dy) {
  using Map = Eigen::Map<Matrix<T>>;
  using CMap = Eigen::Map<const Matrix<T>>;
  const int p = in_.plane();
  Matrix<T> dx(dy.rows(), in_.size());
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    CMap g(dy.row(b).data(), out_.c, p);
    if (this->param_grads) {
      weight.grad.noalias() += g * CMap(x_.row(b).data(), in_.c, p).transpose();
      if (has_bias_) bias.grad.row(0) += g.rowwise().sum().transpose();
    }
    Map(dx.row(b).data(), in_.c, p).noalias() = weight.value.transpose() * g;
  }
  return dx;
}

// ---------------------------------------------------------------- Sequential

template <class T>
Matrix<T> Sequential<T>::forward(const Matrix<T>& x) {
  Matrix<T> h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

template <class T>
Matrix<T> Sequential<T>::backward(const Matrix<T>& dy) {
  Matrix<T> g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <class T>
std::vector<Parameter<T>*> Sequential<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers_)
    for (auto* p : l->parameters()) out.push_back(p);
  return out;
}

template <class T>
void Sequential<T>::initialize(std::mt19937_64& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

template <class T>
void Sequential<T>::set_param_grads(bool on) {
  for (auto& l : layers_) l->param_grads = on;
}

template <class T>
void Sequential<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

#define VAEDNN_INSTANTIATE(T)                                        \
  template void uniform_fill<T>(Matrix<T>&, T, std::mt19937_64&);    \
  template class Dense<T>;                                           \
  template class Tanh<T>;                                            \
  template class MaskLayer<T>;                                       \
  template class Conv2d<T>;                                          \
  template class ConvTranspose2d<T>;                                 \
  template class Pool2d<T>;                                          \
  template class PointwiseConv<T>;                                   \
  template class Sequential<T>;

VAEDNN_INSTANTIATE(float)
VAEDNN_INSTANTIATE(double)
#undef VAEDNN_INSTANTIATE

}  // namespace vaednn::nn
