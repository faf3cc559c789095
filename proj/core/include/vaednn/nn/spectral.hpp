/**
 * @file spectral.hpp
 * @brief Exact matrix DFTs on small grids, the FNO spectral convolution and
 *        the Fourier layer tanh(K v + W v + b).
 *
 * Grids here are 40x20, so separable matrix DFTs cost a few small GEMMs and
 * stay exact in both float and double; no FFT library is needed.
 */
#pragma once

#include <vector>

#include "vaednn/nn/layers.hpp"

namespace vaednn::nn {

/// Full unnormalized 2D DFT U(m,n) = sum u(k,l) exp(-2 pi i (mk/N1 + nl/N2))
/// applied to a stack of planes stored as rows of (planes, N1*N2).
template <class T>
class Dft2 {
 public:
  Dft2(int n1, int n2);
  /// re/im are resized to the shape of u.
  void forward(const Matrix<T>& u, Matrix<T>& re, Matrix<T>& im) const;
  /// Re( sum_{m,n} G(m,n) exp(+2 pi i (mk/N1 + nl/N2)) ), the adjoint of
  /// forward() restricted to real outputs.
  Matrix<T> adjoint_real(const Matrix<T>& re, const Matrix<T>& im) const;
  int n1() const noexcept { return n1_; }
  int n2() const noexcept { return n2_; }

 private:
  int n1_, n2_;
  Matrix<T> c1_, s1_, c2_, s2_;  // cos / sin tables, symmetric
};

/// Retained wavenumbers of a real 2D field: k1 in [0,m1) and [N1-m1,N1),
/// k2 in [0,m2) on the non-redundant half-spectrum.
struct ModeSet {
  std::vector<int> k1;
  std::vector<int> k2;
  int count() const noexcept { return static_cast<int>(k1.size() * k2.size()); }
};
ModeSet make_mode_set(int n1, int n2, int modes1, int modes2);

/// Spectral branch of a Fourier layer. R is complex per retained mode and
/// stored as separate real/imaginary arrays of shape (modes, C_in*C_out).
template <class T>
class SpectralConv2d final : public Layer<T> {
 public:
  SpectralConv2d(Shape3 in, int out_channels, int modes1, int modes2);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight_re, &weight_im}; }
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return in_; }
  Shape3 output_shape() const override { return out_; }
  std::string kind() const override { return "SpectralConv2D"; }
  const ModeSet& modes() const noexcept { return modes_; }

  Parameter<T> weight_re, weight_im;

 private:
  Shape3 in_, out_;
  ModeSet modes_;
  // Truncated transforms as dense matrices over the plane: rows/columns
  // [0, modes) hold real parts, [modes, 2 modes) imaginary parts.
  Matrix<T> fwd_;   // (2 modes, N1*N2)
  Matrix<T> inv_;   // (N1*N2, 2 modes), half-spectrum weights and 1/(N1 N2)
  Matrix<T> xm_;    // cached input spectrum (2 modes, B*C_in)
  long batch_ = 0;
};

/// v' = act(spectral(v) + W v + b).
template <class T>
class FourierLayer final : public Layer<T> {
 public:
  FourierLayer(Shape3 in, int modes1, int modes2, bool activate = true, bool local_bias = true);
  Matrix<T> forward(const Matrix<T>& x) override;
  Matrix<T> backward(const Matrix<T>& dy) override;
  std::vector<Parameter<T>*> parameters() override;
  void initialize(std::mt19937_64& rng) override;
  Shape3 input_shape() const override { return spectral.input_shape(); }
  Shape3 output_shape() const override { return spectral.output_shape(); }
  std::string kind() const override { return "FourierLayer"; }
  std::string activation() const override { return activate_ ? "Tanh" : "Linear"; }

  SpectralConv2d<T> spectral;
  PointwiseConv<T> local;

 private:
  bool activate_;
  Matrix<T> y_;
};

}  // namespace vaednn::nn
