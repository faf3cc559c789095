#include "vaednn/nn/spectral.hpp"

#include <cmath>
#include <numbers>

#include "vaednn/error.hpp"

namespace vaednn::nn {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <class T>
using CMap = Eigen::Map<const Matrix<T>>;
template <class T>
using MMap = Eigen::Map<Matrix<T>>;

}  // namespace

// ---------------------------------------------------------------- Dft2

template <class T>
Dft2<T>::Dft2(int n1, int n2) : n1_(n1), n2_(n2) {
  c1_.resize(n1, n1);
  s1_.resize(n1, n1);
  c2_.resize(n2, n2);
  s2_.resize(n2, n2);
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n1; ++b) {
      const double th = kTwoPi * static_cast<double>((a * b) % n1) / n1;
      c1_(a, b) = static_cast<T>(std::cos(th));
      s1_(a, b) = static_cast<T>(std::sin(th));
    }
  for (int a = 0; a < n2; ++a)
    for (int b = 0; b < n2; ++b) {
      const double th = kTwoPi * static_cast<double>((a * b) % n2) / n2;
      c2_(a, b) = static_cast<T>(std::cos(th));
      s2_(a, b) = static_cast<T>(std::sin(th));
    }
}

template <class T>
void Dft2<T>::forward(const Matrix<T>& u, Matrix<T>& re, Matrix<T>& im) const {
  const Eigen::Index planes = u.rows();
  if (u.cols() != n1_ * n2_) throw Error(ErrorKind::shape_mismatch, "Dft2 plane size mismatch");
  CMap<T> uv(u.data(), planes * n1_, n2_);
  const Matrix<T> are = uv * c2_;
  const Matrix<T> aim = -(uv * s2_);
  re.resize(planes, n1_ * n2_);
  im.resize(planes, n1_ * n2_);
  for (Eigen::Index p = 0; p < planes; ++p) {
    const auto ar = are.middleRows(p * n1_, n1_);
    const auto ai = aim.middleRows(p * n1_, n1_);
    MMap<T>(re.row(p).data(), n1_, n2_).noalias() = c1_ * ar + s1_ * ai;
    MMap<T>(im.row(p).data(), n1_, n2_).noalias() = c1_ * ai - s1_ * ar;
  }
}

template <class T>
Matrix<T> Dft2<T>::adjoint_real(const Matrix<T>& re, const Matrix<T>& im) const {
  const Eigen::Index planes = re.rows();
  Matrix<T> cre(planes * n1_, n2_), cim(planes * n1_, n2_);
  for (Eigen::Index p = 0; p < planes; ++p) {
    CMap<T> gr(re.row(p).data(), n1_, n2_);
    CMap<T> gi(im.row(p).data(), n1_, n2_);
    cre.middleRows(p * n1_, n1_).noalias() = c1_ * gr - s1_ * gi;
    cim.middleRows(p * n1_, n1_).noalias() = c1_ * gi + s1_ * gr;
  }
  Matrix<T> out(planes, n1_ * n2_);
  MMap<T>(out.data(), planes * n1_, n2_).noalias() = cre * c2_ - cim * s2_;
  return out;
}

// ---------------------------------------------------------------- modes

ModeSet make_mode_set(int n1, int n2, int modes1, int modes2) {
  if (modes1 < 1 || modes2 < 1) throw Error(ErrorKind::invalid_config, "Fourier modes must be >= 1");
  ModeSet m;
  if (2 * modes1 >= n1) {
    for (int k = 0; k < n1; ++k) m.k1.push_back(k);
  } else {
    for (int k = 0; k < modes1; ++k) m.k1.push_back(k);
    for (int k = n1 - modes1; k < n1; ++k) m.k1.push_back(k);
  }
  const int m2 = std::min(modes2, n2 / 2 + 1);
  for (int k = 0; k < m2; ++k) m.k2.push_back(k);
  return m;
}

// ---------------------------------------------------------------- SpectralConv2d

template <class T>
SpectralConv2d<T>::SpectralConv2d(Shape3 in, int out_channels, int modes1, int modes2)
    : in_(in), out_{out_channels, in.h, in.w}, modes_(make_mode_set(in.h, in.w, modes1, modes2)) {
  const int n1 = in.h, n2 = in.w, plane = n1 * n2, nm = modes_.count();
  const int m2 = static_cast<int>(modes_.k2.size());
  weight_re.name = "spectral_re";
  weight_im.name = "spectral_im";
  weight_re.value = Matrix<T>::Zero(nm, in.c * out_channels);
  weight_im.value = Matrix<T>::Zero(nm, in.c * out_channels);
  weight_re.zero_grad();
  weight_im.zero_grad();

  fwd_.resize(2 * nm, plane);
  inv_.resize(plane, 2 * nm);
  const double norm = 1.0 / static_cast<double>(plane);
  for (int m = 0; m < nm; ++m) {
    const int k1 = modes_.k1[static_cast<std::size_t>(m / m2)];
    const int k2 = modes_.k2[static_cast<std::size_t>(m % m2)];
    const double w = (k2 == 0 || 2 * k2 == n2) ? norm : 2.0 * norm;
    for (int x = 0; x < n1; ++x)
      for (int y = 0; y < n2; ++y) {
        // exact phase from integer arithmetic
        const long num = static_cast<long>((k1 * x) % n1) * n2 + static_cast<long>((k2 * y) % n2) * n1;
        const double th = kTwoPi * static_cast<double>(num % (static_cast<long>(n1) * n2)) / plane;
        const int q = x * n2 + y;
        fwd_(m, q) = static_cast<T>(std::cos(th));
        fwd_(nm + m, q) = static_cast<T>(-std::sin(th));
        inv_(q, m) = static_cast<T>(w * std::cos(th));
        inv_(q, nm + m) = static_cast<T>(-w * std::sin(th));
      }
  }
}

template <class T>
void SpectralConv2d<T>::initialize(std::mt19937_64& rng) {
  const double scale = 1.0 / (static_cast<double>(in_.c) * out_.c);
  std::uniform_real_distribution<double> u(0.0, scale);
  for (Eigen::Index i = 0; i < weight_re.value.size(); ++i) weight_re.value.data()[i] = static_cast<T>(u(rng));
  for (Eigen::Index i = 0; i < weight_im.value.size(); ++i) weight_im.value.data()[i] = static_cast<T>(u(rng));
}

template <class T>
Matrix<T> SpectralConv2d<T>::forward(const Matrix<T>& x) {
  if (x.cols() != in_.size()) throw Error(ErrorKind::shape_mismatch, "SpectralConv2d input width mismatch");
  const int plane = in_.plane(), ci = in_.c, co = out_.c, nm = modes_.count();
  batch_ = x.rows();
  const Eigen::Index bc = batch_ * ci, bo = batch_ * co;
  // A row-major (B*C, plane) block is a column-major (plane, B*C) matrix.
  using ColMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
  xm_.noalias() = fwd_ * ColMap(x.data(), plane, bc);

  Matrix<T> ym(2 * nm, bo);
  for (int m = 0; m < nm; ++m) {
    CMap<T> xr(xm_.row(m).data(), batch_, ci), xi(xm_.row(nm + m).data(), batch_, ci);
    CMap<T> rr(weight_re.value.row(m).data(), ci, co), ri(weight_im.value.row(m).data(), ci, co);
    MMap<T> yr(ym.row(m).data(), batch_, co), yi(ym.row(nm + m).data(), batch_, co);
    yr.noalias() = xr * rr;
    yr.noalias() -= xi * ri;
    yi.noalias() = xr * ri;
    yi.noalias() += xi * rr;
  }
  Matrix<T> out(batch_, out_.size());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>(out.data(), plane, bo).noalias() =
      inv_ * ym;
  return out;
}

template <class T>
Matrix<T> SpectralConv2d<T>::backward(const Matrix<T>& dy) {
  const int plane = in_.plane(), ci = in_.c, co = out_.c, nm = modes_.count();
  const Eigen::Index bc = batch_ * ci, bo = batch_ * co;
  using ColMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
  const Matrix<T> dym = inv_.transpose() * ColMap(dy.data(), plane, bo);

  Matrix<T> dxm(2 * nm, bc);
  for (int m = 0; m < nm; ++m) {
    CMap<T> dyr(dym.row(m).data(), batch_, co), dyi(dym.row(nm + m).data(), batch_, co);
    CMap<T> xr(xm_.row(m).data(), batch_, ci), xi(xm_.row(nm + m).data(), batch_, ci);
    CMap<T> rr(weight_re.value.row(m).data(), ci, co), ri(weight_im.value.row(m).data(), ci, co);
    if (this->param_grads) {
      MMap<T> grr(weight_re.grad.row(m).data(), ci, co), gri(weight_im.grad.row(m).data(), ci, co);
      grr.noalias() += xr.transpose() * dyr;
      grr.noalias() += xi.transpose() * dyi;
      gri.noalias() += xr.transpose() * dyi;
      gri.noalias() -= xi.transpose() * dyr;
    }
    MMap<T> dxr(dxm.row(m).data(), batch_, ci), dxi(dxm.row(nm + m).data(), batch_, ci);
    dxr.noalias() = dyr * rr.transpose();
    dxr.noalias() += dyi * ri.transpose();
    dxi.noalias() = dyi * rr.transpose();
    dxi.noalias() -= dyr * ri.transpose();
  }
  Matrix<T> dx(batch_, in_.size());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>(dx.data(), plane, bc).noalias() =
      fwd_.transpose() * dxm;
  return dx;
}

// ---------------------------------------------------------------- FourierLayer

template <class T>
FourierLayer<T>::FourierLayer(Shape3 in, int modes1, int modes2, bool activate, bool local_bias)
    : spectral(in, in.c, modes1, modes2), local(in, in.c, local_bias), activate_(activate) {}

template <class T>
std::vector<Parameter<T>*> FourierLayer<T>::parameters() {
  auto p = spectral.parameters();
  for (auto* q : local.parameters()) p.push_back(q);
  return p;
}

template <class T>
void FourierLayer<T>::initialize(std::mt19937_64& rng) {
  spectral.initialize(rng);
  local.initialize(rng);
}

template <class T>
Matrix<T> FourierLayer<T>::forward(const Matrix<T>& x) {
  Matrix<T> z = spectral.forward(x);
  z += local.forward(x);
  y_ = activate_ ? Matrix<T>(z.array().tanh().matrix()) : z;
  return y_;
}

template <class T>
Matrix<T> FourierLayer<T>::backward(const Matrix<T>& dy) {
  spectral.param_grads = this->param_grads;
  local.param_grads = this->param_grads;
  const Matrix<T> g = activate_ ? Matrix<T>((dy.array() * (T(1) - y_.array().square())).matrix()) : dy;
  Matrix<T> dx = spectral.backward(g);
  dx += local.backward(g);
  return dx;
}

template class Dft2<float>;
template class Dft2<double>;
template class SpectralConv2d<float>;
template class SpectralConv2d<double>;
template class FourierLayer<float>;
template class FourierLayer<double>;

}  // namespace vaednn::nn
