/**
 * @file inversion.hpp
 * @brief MAP estimation of the log-conductivity field from sparse well
 *        observations, through any of the three trained surrogates.
 *
 * Every objective has the same shape, evaluated in normalized units:
 *
 *   J(v) = mean_h (h_pred - h_obs)^2 + mean_y (y_pred - y_obs)^2 + gamma ||v||^2
 *
 * where v is the y-VAE latent mean (VAE-DNN), the normalized y on active
 * cells (FNO) or the whitened KLE coefficients (DeepONet).
 */
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vaednn/dataset.hpp"
#include "vaednn/domain.hpp"
#include "vaednn/geostat.hpp"
#include "vaednn/latent_surrogate.hpp"
#include "vaednn/neural_operators.hpp"
#include "vaednn/vae.hpp"

namespace vaednn {

struct ObservationSet {
  std::vector<CellIndex> wells;
  std::vector<double> y;    ///< one raw value per well
  std::vector<int> times;   ///< snapshot indices of the head observations
  std::vector<double> h;    ///< raw heads, time-major: h[t * wells + w]
  bool noise_free = true;
  /// Only read when !noise_free: misfits are divided by these (normalized units).
  double y_noise_std = 1.0;
  double h_noise_std = 1.0;

  std::size_t y_count() const noexcept { return y.size(); }
  std::size_t h_count() const noexcept { return h.size(); }
};

void to_json(nlohmann::json& j, const ObservationSet& o);
void from_json(const nlohmann::json& j, ObservationSet& o);

/// Exact cell values at the wells for every snapshot of h_ref (or the
/// listed ones). Throws inactive-well or duplicate-well.
ObservationSet sample_observations(const Field2D& y_ref, const StateField& h_ref, const std::vector<CellIndex>& wells,
                                   const ActiveMask& mask, const std::vector<int>& times = {});

enum class InverseMethod { vaednn, fno, deeponet };
const char* to_string(InverseMethod m) noexcept;
InverseMethod inverse_method_from_string(const std::string& s);

struct InverseConfig {
  double gamma = 1e-4;
  int steps = 2000;
  double learning_rate = 1e-2;
  InverseMethod method = InverseMethod::vaednn;
};

void to_json(nlohmann::json& j, const InverseConfig& c);
/// Missing keys keep the defaults; gamma < 0 or steps < 1 is invalid-config.
void from_json(const nlohmann::json& j, InverseConfig& c);

struct ObjectiveTerms {
  double total = 0.0;
  double h_misfit = 0.0;
  double y_misfit = 0.0;
  double regularization = 0.0;
};

/// Objective over a flat optimization variable. Implementations are not
/// thread-safe (they reuse the surrogate's layer caches).
class InverseObjective {
 public:
  virtual ~InverseObjective() = default;
  virtual int dim() const = 0;
  virtual double gamma() const = 0;
  virtual void set_gamma(double gamma) = 0;
  /// Value and, if `grad` is non-null, its gradient.
  virtual ObjectiveTerms evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) = 0;
  /// Raw y field for the variable, -1 on inactive cells.
  virtual Field2D reconstruct(const Eigen::VectorXd& v) = 0;
};

/// Normalized observation targets shared by the three objectives.
struct NormalizedObservations {
  std::vector<int> y_cells;          ///< flat cell index per y observation
  Eigen::VectorXd y;                 ///< normalized y targets
  std::vector<std::pair<int, int>> h_points;  ///< (time, flat cell) per h observation
  Eigen::VectorXd h;                 ///< normalized h targets
  double y_weight = 1.0;             ///< 1 / noise variance, 1 when noise free
  double h_weight = 1.0;
};

NormalizedObservations normalize_observations(const ObservationSet& obs, const NormStats& stats,
                                              const ActiveMask& mask);

/// Over the y-VAE latent mean; y = decode_y(v), h = decode_h(map(v)).
template <class T>
class VaeDnnObjective : public InverseObjective {
 public:
  VaeDnnObjective(Vae<T>& y_vae, LatentMap<T>& map, Vae<T>& h_vae, const NormStats& stats, const ActiveMask& mask,
                  const ObservationSet& obs, double gamma);
  int dim() const override { return y_vae_.config().latent_dim; }
  double gamma() const override { return gamma_; }
  void set_gamma(double g) override { gamma_ = g; }
  ObjectiveTerms evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) override;
  Field2D reconstruct(const Eigen::VectorXd& v) override;

 private:
  Vae<T>& y_vae_;
  LatentMap<T>& map_;
  Vae<T>& h_vae_;
  const NormStats& stats_;
  const ActiveMask& mask_;
  NormalizedObservations obs_;
  double gamma_;
};

/// Over the normalized y on active cells (row-major active order).
template <class T>
class FnoObjective : public InverseObjective {
 public:
  FnoObjective(Fno<T>& model, const NormStats& stats, const ActiveMask& mask, const ObservationSet& obs,
               double gamma);
  int dim() const override { return static_cast<int>(mask_.active_count()); }
  double gamma() const override { return gamma_; }
  void set_gamma(double g) override { gamma_ = g; }
  ObjectiveTerms evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) override;
  Field2D reconstruct(const Eigen::VectorXd& v) override;

 private:
  Fno<T>& model_;
  const NormStats& stats_;
  const ActiveMask& mask_;
  NormalizedObservations obs_;
  double gamma_;
};

/// Over the whitened KLE coefficients feeding the branch net; y is the KLE
/// reconstruction, normalized with the dataset statistics for the misfit.
template <class T>
class DeepONetObjective : public InverseObjective {
 public:
  DeepONetObjective(DeepONet<T>& model, const KleBasis& basis, const NormStats& stats, const ActiveMask& mask,
                    const ObservationSet& obs, double gamma);
  int dim() const override { return model_.config().n_xi; }
  double gamma() const override { return gamma_; }
  void set_gamma(double g) override { gamma_ = g; }
  ObjectiveTerms evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) override;
  Field2D reconstruct(const Eigen::VectorXd& v) override;

 private:
  DeepONet<T>& model_;
  const KleBasis& basis_;
  const ActiveMask& mask_;
  NormalizedObservations obs_;
  nn::Matrix<T> coords_;      ///< trunk inputs of the head observations
  Eigen::MatrixXd y_map_;     ///< d(normalized y_obs)/d(xi)
  Eigen::VectorXd y_offset_;  ///< normalized y_obs at xi = 0
  double gamma_;
};

struct InverseResult {
  InverseMethod method = InverseMethod::vaednn;
  InverseConfig config;
  Eigen::VectorXd estimate;   ///< lowest-objective iterate
  Field2D y;                  ///< raw, -1 on inactive cells
  std::vector<double> trace;  ///< objective at every iterate, initial point first
  ObjectiveTerms initial, final;
  int best_step = 0;
  std::optional<double> rl2_y;
  double seconds = 0.0;
};

/// Non-finite objective during inversion; trace() holds the values so far.
class InversionDivergence : public Error {
 public:
  InversionDivergence(const std::string& message, std::vector<double> trace)
      : Error(ErrorKind::divergence, message), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Adam from the zero vector. The returned estimate is the best iterate seen,
/// so final.total <= initial.total always holds. rl2_y is filled when both
/// y_ref and mask are given. Throws InversionDivergence on a non-finite value.
InverseResult minimize(InverseObjective& objective, const InverseConfig& cfg, const Field2D* y_ref = nullptr,
                       const ActiveMask* mask = nullptr);

InverseResult invert_vaednn(SurrogateBundle& bundle, const ObservationSet& obs, const InverseConfig& cfg,
                            const Field2D* y_ref = nullptr);
InverseResult invert_fno(Fno<float>& model, const NormStats& stats, const ActiveMask& mask, const ObservationSet& obs,
                         const InverseConfig& cfg, const Field2D* y_ref = nullptr);
InverseResult invert_deeponet(DeepONet<float>& model, const KleBasis& basis, const NormStats& stats,
                              const ActiveMask& mask, const ObservationSet& obs, const InverseConfig& cfg,
                              const Field2D* y_ref = nullptr);

struct SweepRow {
  double gamma = 0.0;
  bool ok = false;
  std::string error;  ///< set when !ok
  InverseResult result;
};

/// One inversion per gamma with the same budget and zero initialization;
/// rows sorted by gamma. Failures are flagged per row, not thrown.
std::vector<SweepRow> gamma_sweep(InverseObjective& objective, std::vector<double> gammas, const InverseConfig& cfg,
                                  const Field2D* y_ref = nullptr, const ActiveMask* mask = nullptr);

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows);

void save_inverse_result(const std::filesystem::path& dir, const InverseResult& r,
                         const nlohmann::json& metadata = nlohmann::json::object());
InverseResult load_inverse_result(const std::filesystem::path& dir);

}  // namespace vaednn
