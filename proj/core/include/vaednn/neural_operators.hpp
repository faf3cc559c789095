/**
 * @file neural_operators.hpp
 * @brief Baseline operator learners: a Fourier neural operator that maps the
 *        normalized y grid to all head snapshots at once, and a DeepONet whose
 *        branch reads truncated KLE coefficients of y and whose trunk reads
 *        space-time coordinates.
 */
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/dataset.hpp"
#include "vaednn/geostat.hpp"
#include "vaednn/nn/spectral.hpp"
#include "vaednn/training.hpp"

namespace vaednn {

// ------------------------------------------------------------------ FNO

struct FnoConfig {
  int n_x1 = 40;
  int n_x2 = 20;
  int width = 128;
  int modes1 = 8;
  int modes2 = 8;
  int n_layers = 4;
  int out_channels = 24;
  int projection_hidden = 128;
  bool local_bias = true;      ///< bias on the pointwise W of each Fourier layer
  bool activate_last = true;   ///< tanh after the last Fourier layer as well
  bool operator==(const FnoConfig&) const = default;
};
void to_json(nlohmann::json& j, const FnoConfig& c);
void from_json(const nlohmann::json& j, FnoConfig& c);

/// Lift P (3 -> width, pointwise) on [masked y, x1, x2], Fourier layers,
/// projection Q (width -> hidden -> out, pointwise, tanh between).
template <class T>
class Fno {
 public:
  Fno(const FnoConfig& cfg, const std::vector<unsigned char>& cell_mask);

  /// y rows are normalized (n1*n2) fields; output rows (out_channels*n1*n2).
  nn::Matrix<T> forward(const nn::Matrix<T>& y);
  /// Returns d/dy (zero on inactive cells).
  nn::Matrix<T> backward(const nn::Matrix<T>& d_out);
  /// The 3-channel network input for a batch of normalized y rows.
  nn::Matrix<T> input_channels(const nn::Matrix<T>& y) const;
  /// Output of the lift network P, (batch, width*n1*n2).
  nn::Matrix<T> lift(const nn::Matrix<T>& y);

  std::vector<nn::Parameter<T>*> parameters() { return net_.parameters(); }
  void initialize(std::uint64_t seed);
  void set_param_grads(bool on) { net_.set_param_grads(on); }
  void zero_grad() { net_.zero_grad(); }
  std::size_t parameter_count() { return nn::parameter_count(parameters()); }
  const FnoConfig& config() const noexcept { return cfg_; }
  const nn::RowVector<T>& loss_mask() const noexcept { return loss_mask_; }
  nn::Sequential<T>& network() noexcept { return net_; }
  nn::FourierLayer<T>& fourier_layer(int k);

 private:
  FnoConfig cfg_;
  nn::RowVector<T> plane_mask_, loss_mask_, coord1_, coord2_;
  nn::Sequential<T> net_;
};

/// Masked MSE between forward(y) and h; gradient accumulated when
/// `backward`, d/dy written to `d_y` if non-null.
template <class T>
double fno_objective(Fno<T>& model, const nn::Matrix<T>& y, const nn::Matrix<T>& h, bool backward,
                     nn::Matrix<T>* d_y = nullptr);

struct OperatorData {
  NdArray<float> y;  ///< normalized (N, n1, n2)
  NdArray<float> h;  ///< normalized (N, N_t, n1, n2)
};

TrainHistory train_fno(Fno<float>& model, const OperatorData& train, const OperatorData* validation,
                       const TrainConfig& cfg);

/// Raw y (n1, n2) to heads (out_channels, n1, n2), -1 on inactive cells.
StateField fno_predict(Fno<float>& model, const NormStats& stats, const ActiveMask& mask, const Field2D& y);

std::string save_fno(const std::filesystem::path& dir, Fno<float>& model, const TrainHistory& history,
                     const nlohmann::json& metadata = nlohmann::json::object());
struct LoadedFno {
  std::unique_ptr<Fno<float>> model;
  std::string fingerprint;
  nlohmann::json metadata;
  TrainHistory history;
};
LoadedFno load_fno(const std::filesystem::path& dir, const std::vector<unsigned char>& cell_mask);

// ------------------------------------------------------------------ DeepONet

struct DeepONetConfig {
  int n_xi = 150;
  std::vector<int> branch_hidden = {1200, 1200, 1200, 1200};
  std::vector<int> trunk_hidden = {300, 300, 300, 300};
  int p = 90;
  int n_t = 24;
  bool operator==(const DeepONetConfig&) const = default;
};
void to_json(nlohmann::json& j, const DeepONetConfig& c);
void from_json(const nlohmann::json& j, DeepONetConfig& c);

/// G(xi)(x) = sum_k branch_k(xi) trunk_k(x) + b0.
template <class T>
class DeepONet {
 public:
  explicit DeepONet(const DeepONetConfig& cfg);

  /// xi (B, n_xi), coords (P, 3) -> (B, P).
  nn::Matrix<T> forward(const nn::Matrix<T>& xi, const nn::Matrix<T>& coords);
  /// Accumulates parameter gradients; returns d/dxi. The trunk input
  /// gradient is not needed and not formed.
  nn::Matrix<T> backward(const nn::Matrix<T>& d_out);

  nn::Sequential<T>& branch() noexcept { return branch_; }
  nn::Sequential<T>& trunk() noexcept { return trunk_; }
  nn::Parameter<T>& bias() noexcept { return b0_; }
  std::vector<nn::Parameter<T>*> parameters();
  void initialize(std::uint64_t seed);
  void set_param_grads(bool on);
  void zero_grad();
  std::size_t parameter_count() { return nn::parameter_count(parameters()); }
  const DeepONetConfig& config() const noexcept { return cfg_; }

 private:
  DeepONetConfig cfg_;
  nn::Sequential<T> branch_, trunk_;
  nn::Parameter<T> b0_;
  nn::Matrix<T> bout_, tout_;
};

/// Normalized (i/(n1-1), j/(n2-1), t/(n_t-1)) for every active cell and
/// snapshot, time-major: row t*N_active + a.
nn::Matrix<float> deeponet_coordinates(const ActiveMask& mask, int n_t);
/// Coordinates of selected (t, flat cell) pairs.
nn::Matrix<float> deeponet_coordinates(const ActiveMask& mask, int n_t,
                                       const std::vector<std::pair<int, int>>& time_cell);
/// h (N, n_t, n1, n2) gathered in the deeponet_coordinates() order.
nn::Matrix<float> deeponet_targets(const NdArray<float>& h, const ActiveMask& mask);
/// Whitened KLE coefficients (first n_xi terms) of raw y rows (N, n1, n2).
nn::Matrix<float> kle_features(const KleBasis& basis, const NdArray<float>& y_raw, int n_xi);

template <class T>
double deeponet_objective(DeepONet<T>& model, const nn::Matrix<T>& xi, const nn::Matrix<T>& coords,
                          const nn::Matrix<T>& target, bool backward, nn::Matrix<T>* d_xi = nullptr);

struct DeepONetData {
  nn::Matrix<float> xi;      ///< (N, n_xi)
  nn::Matrix<float> target;  ///< (N, P) normalized heads
};

/// Every step takes one batch of samples against all coordinates.
TrainHistory train_deeponet(DeepONet<float>& model, const nn::Matrix<float>& coords, const DeepONetData& train,
                            const DeepONetData* validation, const TrainConfig& cfg);

StateField deeponet_predict(DeepONet<float>& model, const KleBasis& basis, const NormStats& stats,
                            const ActiveMask& mask, const Field2D& y);

std::string save_deeponet(const std::filesystem::path& dir, DeepONet<float>& model, const TrainHistory& history,
                          const nlohmann::json& metadata = nlohmann::json::object());
struct LoadedDeepONet {
  std::unique_ptr<DeepONet<float>> model;
  std::string fingerprint;
  nlohmann::json metadata;
  TrainHistory history;
};
LoadedDeepONet load_deeponet(const std::filesystem::path& dir);

/// Throws fingerprint-mismatch if the checkpoint was trained on another basis.
void check_kle_fingerprint(const LoadedDeepONet& model, const KleBasis& basis);

}  // namespace vaednn
