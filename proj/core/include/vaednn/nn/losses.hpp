/**
 * @file losses.hpp
 * @brief Training losses with their analytic gradients.
 *
 * Every loss multiplies residuals by a 0/1 cell mask before anything else,
 * so values on inactive cells never reach a loss or a gradient.
 */
#pragma once

#include <algorithm>
#include <cmath>

#include "vaednn/error.hpp"
#include "vaednn/nn/spectral.hpp"

namespace vaednn::nn {

template <class T>
struct ElboTerms {
  double recon = 0.0;  ///< batch mean of the masked squared error
  double kl = 0.0;     ///< batch mean of |mu|^2 - sum log_var + sum exp(log_var), unweighted
  double total = 0.0;  ///< recon + beta * kl
  Matrix<T> d_recon, d_mu, d_logvar;
};

/// Mean over the batch of ||m (x - r)||^2 + beta (|mu|^2 - log det Sigma + tr Sigma).
template <class T>
ElboTerms<T> elbo_loss(const Matrix<T>& target, const Matrix<T>& recon, const Matrix<T>& mu, const Matrix<T>& logvar,
                       const RowVector<T>& mask, double beta) {
  if (target.rows() != recon.rows() || target.cols() != recon.cols() || mask.size() != target.cols()) {
    throw Error(ErrorKind::shape_mismatch, "elbo_loss: target/recon/mask shapes differ");
  }
  const auto batch = static_cast<double>(target.rows());
  ElboTerms<T> out;
  const Matrix<T> diff = ((target - recon).array().rowwise() * mask.array()).matrix();
  const Matrix<T> sigma = logvar.array().exp().matrix();
  out.recon = static_cast<double>(diff.squaredNorm()) / batch;
  out.kl = static_cast<double>(mu.squaredNorm() - logvar.sum() + sigma.sum()) / batch;
  out.total = out.recon + beta * out.kl;
  out.d_recon = diff * static_cast<T>(-2.0 / batch);
  out.d_mu = mu * static_cast<T>(2.0 * beta / batch);
  out.d_logvar = (sigma.array() - T(1)).matrix() * static_cast<T>(beta / batch);
  return out;
}

template <class T>
struct FflTerms {
  double loss = 0.0;
  Matrix<T> d_recon;
};

/// Focal frequency loss on (batch, channels * N1 * N2) fields, each channel
/// an N1 x N2 plane. W = |dU|^alpha is treated as a constant (no gradient)
/// and clipped to [0, w_max]. Averaged over batch, channels and bins.
template <class T>
FflTerms<T> focal_frequency_loss(const Matrix<T>& recon, const Matrix<T>& target, int channels,
                                 const RowVector<T>& plane_mask, const Dft2<T>& dft, double alpha, double w_max) {
  const int plane = dft.n1() * dft.n2();
  if (recon.rows() != target.rows() || recon.cols() != target.cols() || recon.cols() != channels * plane ||
      plane_mask.size() != plane) {
    throw Error(ErrorKind::shape_mismatch, "focal_frequency_loss: shape mismatch");
  }
  const Eigen::Index planes = recon.rows() * channels;
  Matrix<T> diff(planes, plane);
  for (Eigen::Index p = 0; p < planes; ++p) {
    const Eigen::Index b = p / channels, c = p % channels;
    diff.row(p) = (target.row(b).segment(c * plane, plane) - recon.row(b).segment(c * plane, plane)).array() *
                  plane_mask.array();
  }
  Matrix<T> re, im;
  dft.forward(diff, re, im);
  const Matrix<T> e2 = re.cwiseAbs2() + im.cwiseAbs2();
  Matrix<T> w = e2.array().sqrt().pow(static_cast<T>(alpha)).matrix();
  w = w.cwiseMax(T(0)).cwiseMin(static_cast<T>(w_max));
  const double z = static_cast<double>(planes) * plane;
  FflTerms<T> out;
  out.loss = static_cast<double>((w.array() * e2.array()).sum()) / z;
  const Matrix<T> g = dft.adjoint_real((w.array() * re.array()).matrix(), (w.array() * im.array()).matrix());
  out.d_recon.resize(recon.rows(), recon.cols());
  const T scale = static_cast<T>(-2.0 / z);
  for (Eigen::Index p = 0; p < planes; ++p) {
    const Eigen::Index b = p / channels, c = p % channels;
    out.d_recon.row(b).segment(c * plane, plane) = (g.row(p).array() * plane_mask.array()) * scale;
  }
  return out;
}

/// sum m (p - t)^2 / (batch * sum m); gradient written to `grad` if non-null.
template <class T>
double masked_mse(const Matrix<T>& pred, const Matrix<T>& target, const RowVector<T>& mask, Matrix<T>* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || mask.size() != pred.cols()) {
    throw Error(ErrorKind::shape_mismatch, "masked_mse: shape mismatch");
  }
  const double denom = static_cast<double>(pred.rows()) * static_cast<double>(mask.sum());
  if (!(denom > 0)) throw Error(ErrorKind::shape_mismatch, "masked_mse: empty mask");
  const Matrix<T> diff = ((pred - target).array().rowwise() * mask.array()).matrix();
  if (grad) *grad = diff * static_cast<T>(2.0 / denom);
  return static_cast<double>(diff.squaredNorm()) / denom;
}

}  // namespace vaednn::nn
