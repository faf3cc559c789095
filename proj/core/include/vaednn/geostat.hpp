/**
 * @file geostat.hpp
 * @brief Correlated log-conductivity fields and the Karhunen-Loeve expansion
 *        of a parameter ensemble.
 *
 * Fields are generated by dense Cholesky factorization of the covariance
 * over active cells. The default covariance is a two-scale superposition of
 * independent Gaussian-process components (broad and fine correlation
 * lengths).
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vaednn/domain.hpp"
#include "vaednn/ndarray.hpp"

namespace vaednn {

enum class KernelKind { exponential, gaussian };

struct CovarianceComponent {
  double variance = 0.0;
  double length_x1 = 1.0;  ///< m
  double length_x2 = 1.0;  ///< m
  KernelKind kernel = KernelKind::exponential;
  bool operator==(const CovarianceComponent&) const = default;
};

struct CovarianceModel {
  double mean_log_k = -8.0;  ///< ln(m/s)
  std::vector<CovarianceComponent> components;
  double jitter = 1e-10;  ///< diagonal regularization relative to the largest variance

  /// Two-scale default: broad (2500 m, weight 2/3) plus fine (600 m, weight 1/3).
  static CovarianceModel two_scale(double total_variance = 0.75, double broad_weight = 2.0 / 3.0);
  bool operator==(const CovarianceModel&) const = default;
};

void to_json(nlohmann::json& j, const CovarianceModel& c);
void from_json(const nlohmann::json& j, CovarianceModel& c);

std::vector<std::string> validate_covariance(const CovarianceModel& cov);

/// Covariance between two points for a single component.
double covariance_value(const CovarianceComponent& c, double dx1, double dx2);

/// Holds the Cholesky factor so repeated draws cost one matrix-vector product.
class LogConductivitySampler {
 public:
  LogConductivitySampler(const Domain& domain, const CovarianceModel& cov);

  /// Deterministic per seed; inactive cells carry -1.
  Field2D sample(std::uint64_t seed) const;

 private:
  GridSpec grid_;
  ActiveMask mask_;
  double mean_ = 0.0;
  Eigen::MatrixXd factor_;  // lower triangular, empty when all variances are zero
};

Field2D sample_log_conductivity(const Domain& domain, const CovarianceModel& cov, std::uint64_t seed);

/// Truncated Karhunen-Loeve basis over the active-cell vectorization.
struct KleBasis {
  int n_x1 = 0;
  int n_x2 = 0;
  std::vector<int> active_cells;     ///< flat indices
  Field2D mean;                      ///< ensemble mean, -1 on inactive cells
  Eigen::VectorXd eigenvalues;       ///< all N_active values, descending
  Eigen::MatrixXd eigenfunctions;    ///< (stored modes, N_active), orthonormal rows
  int n_xi = 0;                      ///< retained count from the tail-energy rule
  double rtol = 0.0;

  int stored_modes() const noexcept { return static_cast<int>(eigenfunctions.rows()); }
  std::string fingerprint() const;
};

/// Smallest N with sum_{i>N} lambda_i <= rtol * sum_i lambda_i.
int kle_truncation(const Eigen::VectorXd& eigenvalues_descending, double rtol);

KleBasis fit_kle(std::span<const Field2D> samples, const ActiveMask& mask, double rtol);
/// Fits on selected leading-axis slices of a (N, n_x1, n_x2) batch.
KleBasis fit_kle(const NdArray<float>& batch, std::span<const std::size_t> indices, const ActiveMask& mask, double rtol);

/// xi_i = <field - mean, phi_i> / sqrt(lambda_i). n_terms < 0 means n_xi.
Eigen::VectorXd kle_project(const KleBasis& basis, const Field2D& field, int n_terms = -1);
/// mean + sum_i sqrt(lambda_i) phi_i xi_i on active cells, -1 elsewhere.
Field2D kle_reconstruct(const KleBasis& basis, const Eigen::VectorXd& xi);

void save_kle(const std::filesystem::path& dir, const KleBasis& basis);
KleBasis load_kle(const std::filesystem::path& dir);

}  // namespace vaednn
