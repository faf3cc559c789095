#include <complex>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vaednn/nn/spectral.hpp"

using namespace vaednn;
using namespace vaednn::nn;
using vaednn::testing::layer_gradcheck;
using vaednn::testing::Md;
using vaednn::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-4;

// Direct cross-correlation, zero padding. w indexed (co, ci, ky, kx).
Md conv_oracle(const Md& x, const Md& w, const Md& b, Shape3 in, int cout, int k, int stride, int pad) {
  const int oh = (in.h + 2 * pad - k) / stride + 1, ow = (in.w + 2 * pad - k) / stride + 1;
  Md y = Md::Zero(x.rows(), cout * oh * ow);
  for (Eigen::Index n = 0; n < x.rows(); ++n)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = b(0, co);
          for (int ci = 0; ci < in.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                s += w(co, (ci * k + ky) * k + kx) * x(n, (ci * in.h + iy) * in.w + ix);
              }
          y(n, (co * oh + oy) * ow + ox) = s;
        }
  return y;
}

// Scatter form of the transposed convolution; w indexed (ci, co, ky, kx).
Md conv_transpose_oracle(const Md& x, const Md& w, const Md& b, Shape3 in, int cout, int k, int s, int p, int op) {
  const int oh = (in.h - 1) * s - 2 * p + k + op, ow = (in.w - 1) * s - 2 * p + k + op;
  Md y = Md::Zero(x.rows(), cout * oh * ow);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (int co = 0; co < cout; ++co)
      for (int q = 0; q < oh * ow; ++q) y(n, co * oh * ow + q) = b(0, co);
    for (int ci = 0; ci < in.c; ++ci)
      for (int iy = 0; iy < in.h; ++iy)
        for (int ix = 0; ix < in.w; ++ix)
          for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s - p + ky, ox = ix * s - p + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y(n, (co * oh + oy) * ow + ox) += w(ci, (co * k + ky) * k + kx) * x(n, (ci * in.h + iy) * in.w + ix);
              }
  }
  return y;
}

using cd = std::complex<double>;

std::vector<cd> brute_dft(const double* u, int n1, int n2) {
  std::vector<cd> U(static_cast<std::size_t>(n1 * n2));
  for (int a = 0; a < n1; ++a)
    for (int c = 0; c < n2; ++c) {
      cd s = 0;
      for (int k = 0; k < n1; ++k)
        for (int l = 0; l < n2; ++l)
          s += u[k * n2 + l] * std::polar(1.0, -2 * std::numbers::pi * (double(a) * k / n1 + double(c) * l / n2));
      U[static_cast<std::size_t>(a * n2 + c)] = s;
    }
  return U;
}

std::vector<cd> brute_idft(const std::vector<cd>& U, int n1, int n2) {
  std::vector<cd> u(U.size());
  for (int k = 0; k < n1; ++k)
    for (int l = 0; l < n2; ++l) {
      cd s = 0;
      for (int a = 0; a < n1; ++a)
        for (int c = 0; c < n2; ++c)
          s += U[static_cast<std::size_t>(a * n2 + c)] *
               std::polar(1.0, 2 * std::numbers::pi * (double(a) * k / n1 + double(c) * l / n2));
      u[static_cast<std::size_t>(k * n2 + l)] = s / double(n1 * n2);
    }
  return u;
}

}  // namespace

TEST_CASE("dense forward and gradients") {
  Dense<double> d(5, 3);
  CHECK(layer_gradcheck(d, 4) < kGradTol);
  CHECK(parameter_count(d.parameters()) == 18);
}

TEST_CASE("tanh, mask and reshape gradients") {
  Tanh<double> t({2, 3, 2});
  CHECK(layer_gradcheck(t, 3) < kGradTol);
  std::vector<unsigned char> cells = {1, 0, 1, 1, 0, 1};
  MaskLayer<double> m({2, 3, 2}, cells);
  CHECK(layer_gradcheck(m, 3) < kGradTol);
  Md x = Md::Ones(1, 12);
  const Md y = m.forward(x);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 7) == 0.0);
  CHECK(y.sum() == doctest::Approx(8.0));
}

TEST_CASE("conv2d matches direct correlation and its gradients") {
  std::mt19937_64 rng(3);
  for (int stride : {1, 2}) {
    const Shape3 in{2, 6, 5};
    Conv2d<double> conv(in, 3, 3, stride, 1);
    conv.initialize(rng);
    const Md x = random_matrix(2, in.size(), rng);
    const Md ref = conv_oracle(x, conv.weight.value, conv.bias.value, in, 3, 3, stride, 1);
    CHECK((conv.forward(x) - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(layer_gradcheck(conv, 2) < kGradTol);
  }
  Conv2d<double> same({1, 40, 20}, 8, 3);
  CHECK(same.output_shape() == Shape3{8, 40, 20});
}

TEST_CASE("transposed convolution matches the scatter definition") {
  std::mt19937_64 rng(4);
  struct Case { int k, s, p, op; };
  for (const Case c : {Case{3, 1, 1, 0}, Case{3, 2, 1, 1}, Case{4, 2, 1, 0}}) {
    const Shape3 in{3, 5, 4};
    ConvTranspose2d<double> ct(in, 2, c.k, c.s, c.p, c.op);
    ct.initialize(rng);
    const Md x = random_matrix(2, in.size(), rng);
    const Md ref = conv_transpose_oracle(x, ct.weight.value, ct.bias.value, in, 2, c.k, c.s, c.p, c.op);
    CHECK((ct.forward(x) - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(layer_gradcheck(ct, 2) < kGradTol);
  }
  ConvTranspose2d<double> up({96, 10, 5}, 48, 4, 2, 1, 0);
  CHECK(up.output_shape() == Shape3{48, 20, 10});
  ConvTranspose2d<double> up3({16, 10, 5}, 8, 3, 2, 1, 1);
  CHECK(up3.output_shape() == Shape3{8, 20, 10});
}

TEST_CASE("pooling values and gradients") {
  Md x(1, 8);
  x << 1, 2, 3, 4, 5, 6, 7, 8;  // one channel, 2x4
  Pool2d<double> avg({1, 2, 4}, PoolKind::average);
  Pool2d<double> mx({1, 2, 4}, PoolKind::max);
  const Md a = avg.forward(x), m = mx.forward(x);
  CHECK(a(0, 0) == doctest::Approx(3.5));
  CHECK(a(0, 1) == doctest::Approx(5.5));
  CHECK(m(0, 0) == 6.0);
  CHECK(m(0, 1) == 8.0);
  Pool2d<double> avg2({3, 4, 6}, PoolKind::average), mx2({3, 4, 6}, PoolKind::max);
  CHECK(layer_gradcheck(avg2, 2) < kGradTol);
  CHECK(layer_gradcheck(mx2, 2) < kGradTol);
}

TEST_CASE("pointwise convolution gradients") {
  PointwiseConv<double> pw({3, 4, 5}, 2);
  CHECK(layer_gradcheck(pw, 3) < kGradTol);
  PointwiseConv<double> nb({3, 4, 5}, 2, false);
  CHECK(parameter_count(nb.parameters()) == 6);
  CHECK(layer_gradcheck(nb, 2) < kGradTol);
}

TEST_CASE("matrix DFT equals the brute-force transform") {
  std::mt19937_64 rng(5);
  for (auto [n1, n2] : {std::pair{2, 2}, std::pair{4, 4}, std::pair{6, 5}}) {
    Dft2<double> dft(n1, n2);
    const Md u = random_matrix(2, n1 * n2, rng);
    Md re, im;
    dft.forward(u, re, im);
    for (int p = 0; p < 2; ++p) {
      const auto U = brute_dft(u.row(p).data(), n1, n2);
      for (int q = 0; q < n1 * n2; ++q) {
        CHECK(re(p, q) == doctest::Approx(U[q].real()).epsilon(1e-12));
        CHECK(std::abs(im(p, q) - U[q].imag()) < 1e-10);
      }
    }
    // adjoint: <forward(u), G> = <u, adjoint_real(G)> for real-part pairing
    const Md gr = random_matrix(2, n1 * n2, rng), gi = random_matrix(2, n1 * n2, rng);
    const double lhs = (re.array() * gr.array()).sum() + (im.array() * gi.array()).sum();
    const double rhs = (u.array() * dft.adjoint_real(gr, gi).array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("mode set keeps low wavenumbers on the half spectrum") {
  const auto m = make_mode_set(40, 20, 8, 8);
  CHECK(m.k1.size() == 16);
  CHECK(m.k2.size() == 8);
  CHECK(m.count() == 128);
  CHECK(m.k1.front() == 0);
  CHECK(m.k1.back() == 39);
  const auto small = make_mode_set(4, 4, 8, 8);
  CHECK(small.k1.size() == 4);
  CHECK(small.k2.size() == 3);
}

TEST_CASE("spectral convolution with Hermitian weights is the real inverse DFT") {
  const int n1 = 8, n2 = 6, ci = 2, co = 3;
  SpectralConv2d<double> sc({ci, n1, n2}, co, 2, 2);
  std::mt19937_64 rng(6);
  sc.initialize(rng);
  const auto& modes = sc.modes();
  sc.weight_re.value = random_matrix(sc.weight_re.value.rows(), sc.weight_re.value.cols(), rng);
  sc.weight_im.value = random_matrix(sc.weight_im.value.rows(), sc.weight_im.value.cols(), rng);
  // Enforce R(-k1, 0) = conj R(k1, 0) and real R(0, 0).
  const int n_k2 = static_cast<int>(modes.k2.size());
  auto row = [&](int a, int c) { return a * n_k2 + c; };
  for (std::size_t a = 0; a < modes.k1.size(); ++a) {
    const int k1 = modes.k1[a];
    const int r = row(static_cast<int>(a), 0);
    if (k1 == 0 || 2 * k1 == n1) {
      sc.weight_im.value.row(r).setZero();
      continue;
    }
    const auto partner = std::find(modes.k1.begin(), modes.k1.end(), n1 - k1) - modes.k1.begin();
    if (partner == static_cast<long>(modes.k1.size())) {
      sc.weight_re.value.row(r).setZero();
      sc.weight_im.value.row(r).setZero();
    } else if (k1 > n1 / 2) {
      const int pr = row(static_cast<int>(partner), 0);
      sc.weight_re.value.row(r) = sc.weight_re.value.row(pr);
      sc.weight_im.value.row(r) = -sc.weight_im.value.row(pr);
    }
  }
  const Md x = random_matrix(1, ci * n1 * n2, rng);
  const Md y = sc.forward(x);

  std::vector<std::vector<cd>> X;
  for (int c = 0; c < ci; ++c) X.push_back(brute_dft(x.data() + c * n1 * n2, n1, n2));
  for (int o = 0; o < co; ++o) {
    std::vector<cd> Y(static_cast<std::size_t>(n1 * n2), 0.0);
    for (std::size_t a = 0; a < modes.k1.size(); ++a)
      for (int c = 0; c < n_k2; ++c) {
        const int k1 = modes.k1[a], k2 = modes.k2[static_cast<std::size_t>(c)];
        cd s = 0;
        for (int i = 0; i < ci; ++i) {
          const int m = row(static_cast<int>(a), c);
          s += cd(sc.weight_re.value(m, i * co + o), sc.weight_im.value(m, i * co + o)) *
               X[static_cast<std::size_t>(i)][static_cast<std::size_t>(k1 * n2 + k2)];
        }
        Y[static_cast<std::size_t>(k1 * n2 + k2)] = s;
        if (k2 > 0) Y[static_cast<std::size_t>(((n1 - k1) % n1) * n2 + (n2 - k2))] = std::conj(s);
      }
    const auto u = brute_idft(Y, n1, n2);
    for (int q = 0; q < n1 * n2; ++q) {
      CHECK(std::abs(u[static_cast<std::size_t>(q)].imag()) < 1e-10);
      CHECK(std::abs(u[static_cast<std::size_t>(q)].real() - y(0, o * n1 * n2 + q)) < 1e-10);
    }
  }
}

TEST_CASE("spectral convolution on constant fields is channel mixing") {
  const int n1 = 40, n2 = 20;
  SpectralConv2d<double> sc({2, n1, n2}, 2, 8, 8);
  std::mt19937_64 rng(8);
  sc.initialize(rng);
  sc.weight_re.value = random_matrix(sc.weight_re.value.rows(), 4, rng);
  Md x(1, 2 * n1 * n2);
  x.leftCols(n1 * n2).setConstant(1.5);
  x.rightCols(n1 * n2).setConstant(-0.5);
  const Md y = sc.forward(x);
  for (int o = 0; o < 2; ++o) {
    const double expect = sc.weight_re.value(0, 0 * 2 + o) * 1.5 + sc.weight_re.value(0, 1 * 2 + o) * -0.5;
    CHECK((y.row(0).segment(o * n1 * n2, n1 * n2).array() - expect).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("content above the retained modes does not reach the spectral output") {
  const int n1 = 40, n2 = 20;
  SpectralConv2d<double> sc({1, n1, n2}, 2, 8, 8);
  std::mt19937_64 rng(9);
  sc.initialize(rng);
  const Md x = random_matrix(1, n1 * n2, rng);
  Md x_hi = x;
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j)
      x_hi(0, i * n2 + j) += std::cos(2 * std::numbers::pi * (12.0 * i / n1 + 3.0 * j / n2)) +
                             0.7 * std::sin(2 * std::numbers::pi * (2.0 * i / n1 + 9.0 * j / n2));
  CHECK((sc.forward(x) - sc.forward(x_hi)).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("spectral convolution and Fourier layer gradients on a toy grid") {
  SpectralConv2d<double> sc({4, 6, 5}, 4, 2, 2);
  CHECK(layer_gradcheck(sc, 2) < kGradTol);
  FourierLayer<double> fl({4, 6, 5}, 2, 2);
  CHECK(layer_gradcheck(fl, 2) < kGradTol);
  FourierLayer<double> lin({4, 6, 5}, 2, 2, false);
  CHECK(layer_gradcheck(lin, 2) < kGradTol);
}

TEST_CASE("Fourier layer with zero spectral weights and identity local map is tanh") {
  FourierLayer<double> fl({3, 8, 4}, 2, 2);
  std::mt19937_64 rng(10);
  fl.initialize(rng);
  fl.spectral.weight_re.value.setZero();
  fl.spectral.weight_im.value.setZero();
  fl.local.weight.value.setIdentity();
  fl.local.bias.value.setZero();
  const Md x = random_matrix(2, 3 * 32, rng);
  CHECK((fl.forward(x) - x.array().tanh().matrix()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sequential chains shapes and gradients") {
  Sequential<double> s;
  s.add<Conv2d<double>>(Shape3{1, 4, 4}, 2, 3);
  s.add_tanh();
  s.add<Pool2d<double>>(s.output_shape(), PoolKind::average);
  s.add<Reshape<double>>(s.output_shape(), Shape3{8, 1, 1});
  s.add<Dense<double>>(8, 3);
  CHECK(s.output_shape() == Shape3{3, 1, 1});
  std::mt19937_64 rng(11);
  s.initialize(rng);
  Md x = random_matrix(2, 16, rng);
  const Md g = random_matrix(2, 3, rng);
  s.zero_grad();
  s.forward(x);
  const Md dx = s.backward(g);
  auto f = [&] { return (s.forward(x).array() * g.array()).sum(); };
  CHECK(vaednn::testing::fd_mismatch(f, x, dx) < kGradTol);
}
