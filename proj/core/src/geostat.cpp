#include "vaednn/geostat.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vaednn/container.hpp"
#include "vaednn/hash.hpp"

namespace vaednn {

CovarianceModel CovarianceModel::two_scale(double total_variance, double broad_weight) {
  CovarianceModel c;
  c.mean_log_k = -8.0;
  c.components = {
      {total_variance * broad_weight, 2500.0, 2500.0, KernelKind::exponential},
      {total_variance * (1.0 - broad_weight), 600.0, 600.0, KernelKind::exponential},
  };
  return c;
}

void to_json(nlohmann::json& j, const CovarianceModel& c) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& k : c.components) {
    comps.push_back({{"variance", k.variance},
                     {"length_x1", k.length_x1},
                     {"length_x2", k.length_x2},
                     {"kernel", k.kernel == KernelKind::exponential ? "exponential" : "gaussian"}});
  }
  j = {{"mean_log_k", c.mean_log_k}, {"components", comps}, {"jitter", c.jitter}};
}

void from_json(const nlohmann::json& j, CovarianceModel& c) {
  c = CovarianceModel::two_scale();
  c.mean_log_k = j.value("mean_log_k", c.mean_log_k);
  c.jitter = j.value("jitter", c.jitter);
  if (j.contains("components")) {
    c.components.clear();
    for (const auto& k : j.at("components")) {
      CovarianceComponent comp;
      comp.variance = k.at("variance").get<double>();
      comp.length_x1 = k.at("length_x1").get<double>();
      comp.length_x2 = k.value("length_x2", comp.length_x1);
      const auto kind = k.value("kernel", std::string("exponential"));
      if (kind == "exponential") comp.kernel = KernelKind::exponential;
      else if (kind == "gaussian") comp.kernel = KernelKind::gaussian;
      else throw Error(ErrorKind::invalid_config, "unknown covariance kernel '" + kind + "'");
      c.components.push_back(comp);
    }
  }
}

std::vector<std::string> validate_covariance(const CovarianceModel& cov) {
  std::vector<std::string> v;
  if (cov.components.empty()) v.push_back("covariance: at least one component is required");
  for (const auto& c : cov.components) {
    if (c.variance < 0.0) v.push_back("covariance: negative variance");
    if (!(c.length_x1 > 0.0) || !(c.length_x2 > 0.0)) v.push_back("covariance: correlation lengths must be positive");
  }
  if (cov.jitter < 0.0) v.push_back("covariance: negative jitter");
  return v;
}

double covariance_value(const CovarianceComponent& c, double dx1, double dx2) {
  const double a = dx1 / c.length_x1;
  const double b = dx2 / c.length_x2;
  const double r2 = a * a + b * b;
  switch (c.kernel) {
    case KernelKind::exponential: return c.variance * std::exp(-std::sqrt(r2));
    case KernelKind::gaussian: return c.variance * std::exp(-r2);
  }
  return 0.0;
}

LogConductivitySampler::LogConductivitySampler(const Domain& domain, const CovarianceModel& cov)
    : grid_(domain.grid), mask_(domain.mask), mean_(cov.mean_log_k) {
  if (auto v = validate_covariance(cov); !v.empty()) throw Error(ErrorKind::invalid_config, v.front());
  double max_variance = 0.0;
  for (const auto& c : cov.components) max_variance = std::max(max_variance, c.variance);
  if (max_variance == 0.0) return;

  const auto& cells = mask_.active_cells();
  const auto n = static_cast<Eigen::Index>(cells.size());
  std::vector<double> x1(cells.size()), x2(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    x1[k] = (cells[k] / grid_.n_x2 + 0.5) * grid_.d_x1;
    x2[k] = (cells[k] % grid_.n_x2 + 0.5) * grid_.d_x2;
  }
  Eigen::MatrixXd cmat(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      double v = 0.0;
      for (const auto& c : cov.components) v += covariance_value(c, x1[a] - x1[b], x2[a] - x2[b]);
      cmat(a, b) = v;
      cmat(b, a) = v;
    }
    cmat(a, a) += cov.jitter * max_variance;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cmat);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::covariance_not_positive_definite, "Cholesky factorization of the field covariance failed");
  }
  factor_ = llt.matrixL();
}

Field2D LogConductivitySampler::sample(std::uint64_t seed) const {
  Field2D field({static_cast<std::size_t>(grid_.n_x1), static_cast<std::size_t>(grid_.n_x2)}, kInactiveSentinel);
  const auto& cells = mask_.active_cells();
  Eigen::VectorXd values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(cells.size()), mean_);
  if (factor_.size() != 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(values.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    values += factor_.triangularView<Eigen::Lower>() * z;
  }
  for (std::size_t k = 0; k < cells.size(); ++k) field[static_cast<std::size_t>(cells[k])] = values[static_cast<Eigen::Index>(k)];
  return field;
}

Field2D sample_log_conductivity(const Domain& domain, const CovarianceModel& cov, std::uint64_t seed) {
  return LogConductivitySampler(domain, cov).sample(seed);
}

// ---------------------------------------------------------------------------

int kle_truncation(const Eigen::VectorXd& lambda, double rtol) {
  const double total = lambda.sum();
  if (!(total > 0.0)) return 0;
  // tail[n] = sum_{i >= n} lambda_i  (0-based), i.e. the energy left out when n terms are kept
  double tail = total;
  for (Eigen::Index n = 0; n <= lambda.size(); ++n) {
    if (tail <= rtol * total) return static_cast<int>(n);
    if (n < lambda.size()) tail -= lambda[n];
  }
  return static_cast<int>(lambda.size());
}

namespace {

KleBasis fit_from_matrix(Eigen::MatrixXd data, const ActiveMask& mask, double rtol) {
  const auto n_samples = data.rows();
  if (n_samples < 2) throw Error(ErrorKind::insufficient_samples, "KLE needs at least 2 samples");
  if (!(rtol > 0.0 && rtol < 1.0)) throw Error(ErrorKind::invalid_config, "rtol must lie in (0, 1)");

  KleBasis basis;
  basis.n_x1 = mask.n_x1();
  basis.n_x2 = mask.n_x2();
  basis.active_cells = mask.active_cells();
  basis.rtol = rtol;

  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n_samples - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::solver_failure, "covariance eigendecomposition failed");

  const auto n = cov.rows();
  basis.eigenvalues = eig.eigenvalues().reverse();
  const double lambda_max = std::max(basis.eigenvalues.size() ? basis.eigenvalues[0] : 0.0, 0.0);
  Eigen::Index positive = 0;
  while (positive < n && basis.eigenvalues[positive] > 1e-12 * lambda_max && lambda_max > 0.0) ++positive;

  basis.eigenfunctions.resize(positive, n);
  for (Eigen::Index k = 0; k < positive; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(n - 1 - k);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.eigenfunctions.row(k) = v.transpose();
  }
  basis.n_xi = std::min<int>(kle_truncation(basis.eigenvalues, rtol), static_cast<int>(positive));

  basis.mean = Field2D({static_cast<std::size_t>(basis.n_x1), static_cast<std::size_t>(basis.n_x2)}, kInactiveSentinel);
  for (std::size_t k = 0; k < basis.active_cells.size(); ++k) {
    basis.mean[static_cast<std::size_t>(basis.active_cells[k])] = mean[static_cast<Eigen::Index>(k)];
  }
  return basis;
}

}  // namespace

KleBasis fit_kle(std::span<const Field2D> samples, const ActiveMask& mask, double rtol) {
  const auto& cells = mask.active_cells();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].size() != static_cast<std::size_t>(mask.n_x1() * mask.n_x2())) {
      throw Error(ErrorKind::shape_mismatch, "KLE sample does not match the mask grid");
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      data(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = samples[s][static_cast<std::size_t>(cells[k])];
    }
  }
  return fit_from_matrix(std::move(data), mask, rtol);
}

KleBasis fit_kle(const NdArray<float>& batch, std::span<const std::size_t> indices, const ActiveMask& mask, double rtol) {
  const auto& cells = mask.active_cells();
  if (batch.rank() != 3 || batch.dim(1) != static_cast<std::size_t>(mask.n_x1()) ||
      batch.dim(2) != static_cast<std::size_t>(mask.n_x2())) {
    throw Error(ErrorKind::shape_mismatch, "KLE batch must be (N, n_x1, n_x2)");
  }
  Eigen::MatrixXd data(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t s = 0; s < indices.size(); ++s) {
    const auto slice = batch.slice(indices[s]);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      data(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = slice[static_cast<std::size_t>(cells[k])];
    }
  }
  return fit_from_matrix(std::move(data), mask, rtol);
}

Eigen::VectorXd kle_project(const KleBasis& basis, const Field2D& field, int n_terms) {
  if (n_terms < 0) n_terms = basis.n_xi;
  if (field.size() != static_cast<std::size_t>(basis.n_x1 * basis.n_x2)) {
    throw Error(ErrorKind::shape_mismatch, "field does not match the KLE grid");
  }
  if (n_terms > basis.stored_modes()) {
    throw Error(ErrorKind::zero_eigenvalue_mode, "requested " + std::to_string(n_terms) + " modes but only " +
                                                     std::to_string(basis.stored_modes()) + " have positive eigenvalues");
  }
  Eigen::VectorXd centered(static_cast<Eigen::Index>(basis.active_cells.size()));
  for (std::size_t k = 0; k < basis.active_cells.size(); ++k) {
    const auto c = static_cast<std::size_t>(basis.active_cells[k]);
    centered[static_cast<Eigen::Index>(k)] = field[c] - basis.mean[c];
  }
  Eigen::VectorXd xi = basis.eigenfunctions.topRows(n_terms) * centered;
  for (int i = 0; i < n_terms; ++i) {
    if (!(basis.eigenvalues[i] > 0.0)) throw Error(ErrorKind::zero_eigenvalue_mode, "mode " + std::to_string(i));
    xi[i] /= std::sqrt(basis.eigenvalues[i]);
  }
  return xi;
}

Field2D kle_reconstruct(const KleBasis& basis, const Eigen::VectorXd& xi) {
  if (xi.size() > basis.stored_modes()) {
    throw Error(ErrorKind::length_mismatch, "coefficient vector longer than the stored basis");
  }
  Eigen::VectorXd scaled = xi;
  for (Eigen::Index i = 0; i < xi.size(); ++i) scaled[i] *= std::sqrt(std::max(basis.eigenvalues[i], 0.0));
  const Eigen::VectorXd values = basis.eigenfunctions.topRows(xi.size()).transpose() * scaled;
  Field2D out({static_cast<std::size_t>(basis.n_x1), static_cast<std::size_t>(basis.n_x2)}, kInactiveSentinel);
  for (std::size_t k = 0; k < basis.active_cells.size(); ++k) {
    const auto c = static_cast<std::size_t>(basis.active_cells[k]);
    out[c] = basis.mean[c] + values[static_cast<Eigen::Index>(k)];
  }
  return out;
}

std::string KleBasis::fingerprint() const {
  Fnv1a h;
  h.update(std::span<const double>(mean.values()));
  h.update(std::span<const double>(eigenvalues.data(), static_cast<std::size_t>(eigenvalues.size())));
  h.update(std::to_string(n_xi));
  return h.hex();
}

void save_kle(const std::filesystem::path& dir, const KleBasis& basis) {
  Container c;
  c.kind = "kle";
  c.fingerprint = basis.fingerprint();
  c.metadata = {{"rtol", basis.rtol}, {"n_xi", basis.n_xi}, {"n_x1", basis.n_x1}, {"n_x2", basis.n_x2}};
  c.put("mean", basis.mean);
  c.put("eigenvalues", {static_cast<std::size_t>(basis.eigenvalues.size())},
        std::vector<float>(basis.eigenvalues.data(), basis.eigenvalues.data() + basis.eigenvalues.size()));
  const auto rows = static_cast<std::size_t>(basis.eigenfunctions.rows());
  const auto cols = static_cast<std::size_t>(basis.eigenfunctions.cols());
  std::vector<float> ef(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k)
      ef[r * cols + k] = static_cast<float>(basis.eigenfunctions(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)));
  c.put("eigenfunctions", {rows, cols}, std::move(ef));
  std::vector<float> cells(basis.active_cells.begin(), basis.active_cells.end());
  const std::size_t n_cells = cells.size();
  c.put("active_cells", {n_cells}, std::move(cells));
  save_container(dir, c);
}

KleBasis load_kle(const std::filesystem::path& dir) {
  const auto c = load_container(dir);
  if (c.kind != "kle") throw Error(ErrorKind::corrupt_container, dir.string() + " is not a KLE container");
  KleBasis b;
  b.rtol = c.metadata.at("rtol").get<double>();
  b.n_xi = c.metadata.at("n_xi").get<int>();
  b.n_x1 = c.metadata.at("n_x1").get<int>();
  b.n_x2 = c.metadata.at("n_x2").get<int>();
  b.mean = c.get<double>("mean");
  const auto& ev = c.at("eigenvalues").values;
  b.eigenvalues = Eigen::Map<const Eigen::VectorXf>(ev.data(), static_cast<Eigen::Index>(ev.size())).cast<double>();
  const auto& ef = c.at("eigenfunctions");
  b.eigenfunctions = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                         ef.values.data(), static_cast<Eigen::Index>(ef.shape[0]), static_cast<Eigen::Index>(ef.shape[1]))
                         .cast<double>();
  for (float v : c.at("active_cells").values) b.active_cells.push_back(static_cast<int>(v));
  // The stored fingerprint refers to the in-memory (double) basis that was saved.
  return b;
}

}  // namespace vaednn
