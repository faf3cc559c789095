/**
 * @file vae.hpp
 * @brief Convolutional VAEs for the log-conductivity field (y-VAE) and the
 *        time-stacked head field (h-VAE, time as channels).
 *
 * Inputs are normalized fields shaped (C, N1, N2); the encoder masks them
 * first so inactive cells never influence any output.
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/ndarray.hpp"
#include "vaednn/nn/layers.hpp"
#include "vaednn/nn/losses.hpp"
#include "vaednn/training.hpp"

namespace vaednn {

enum class VaeVariant { y, h };

struct VaeConfig {
  VaeVariant variant = VaeVariant::y;
  int in_channels = 1;
  int n_x1 = 40;
  int n_x2 = 20;
  std::vector<int> filters = {8, 16, 32};  ///< encoder channels, mirrored by the decoder
  int latent_dim = 150;
  nn::PoolKind pooling = nn::PoolKind::average;
  double beta = 1e-3;
  double ffl_alpha = 1.0;
  double ffl_weight_max = 1e3;
  bool ffl_enabled = false;

  static VaeConfig y_default();
  static VaeConfig h_default();
  bool operator==(const VaeConfig&) const = default;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
/// Missing keys keep the defaults of the variant named in "variant".
void from_json(const nlohmann::json& j, VaeConfig& c);

/// One row of the layer listing, in the order of the architecture table.
struct LayerRow {
  std::string part;  ///< "Encoder" / "Decoder"
  std::string layer;
  std::string kernel;
  std::string filters;
  nn::Shape3 input;
  nn::Shape3 output;
  std::string activation;
};

template <class T>
class Vae {
 public:
  Vae(const VaeConfig& cfg, const std::vector<unsigned char>& cell_mask);

  struct Latent {
    nn::Matrix<T> mu, logvar;
  };

  /// Batch rows are flattened (C, N1, N2) fields.
  Latent encode(const nn::Matrix<T>& x);
  /// Input gradient; accumulates parameter gradients when enabled.
  nn::Matrix<T> encode_backward(const nn::Matrix<T>& d_mu, const nn::Matrix<T>& d_logvar);
  nn::Matrix<T> decode(const nn::Matrix<T>& z);
  nn::Matrix<T> decode_backward(const nn::Matrix<T>& d_out);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<nn::Parameter<T>*> encoder_parameters();
  std::vector<nn::Parameter<T>*> decoder_parameters();
  void initialize(std::uint64_t seed);
  void set_param_grads(bool on);
  void zero_grad();
  std::size_t parameter_count();

  std::vector<LayerRow> architecture() const;
  const VaeConfig& config() const noexcept { return cfg_; }
  int features() const noexcept { return cfg_.in_channels * cfg_.n_x1 * cfg_.n_x2; }
  const nn::RowVector<T>& loss_mask() const noexcept { return loss_mask_; }
  const nn::RowVector<T>& plane_mask() const noexcept { return plane_mask_; }
  const std::vector<unsigned char>& cell_mask() const noexcept { return cell_mask_; }
  const nn::Dft2<T>& dft() const noexcept { return dft_; }

 private:
  VaeConfig cfg_;
  std::vector<unsigned char> cell_mask_;
  nn::RowVector<T> loss_mask_;
  nn::RowVector<T> plane_mask_;
  nn::Sequential<T> encoder_;
  nn::Dense<T> mean_head_, logvar_head_;
  nn::Sequential<T> decoder_;
  nn::Dft2<T> dft_;
};

/// z = mu + exp(log_var / 2) * eps.
template <class T>
nn::Matrix<T> reparameterize(const nn::Matrix<T>& mu, const nn::Matrix<T>& logvar, const nn::Matrix<T>& eps);

struct VaeLossParts {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double ffl = 0.0;
};

/// Full training objective for a batch with fixed noise `eps`
/// (ELBO, plus the focal frequency loss when enabled). With `backward`
/// the parameter gradients are accumulated.
template <class T>
VaeLossParts vae_objective(Vae<T>& model, const nn::Matrix<T>& x, const nn::Matrix<T>& eps, bool backward);

/// Rows of a (N, ...) float array as an (N, features) matrix.
nn::Matrix<float> as_batch_matrix(const NdArray<float>& a);
nn::Matrix<float> gather_rows(const nn::Matrix<float>& m, const std::vector<std::size_t>& rows);

/// Adam on the objective above; validation uses eps = 0.
TrainHistory train_vae(Vae<float>& model, const NdArray<float>& train, const NdArray<float>* validation,
                       const TrainConfig& cfg);

/// Encoder means for every row of `x` (no sampling), in batches.
nn::Matrix<float> encode_means(Vae<float>& model, const nn::Matrix<float>& x, int batch = 64);

/// Checkpoint: config, parameters, history and caller metadata
/// (for example the normalization fingerprint).
std::string save_vae(const std::filesystem::path& dir, Vae<float>& model, const TrainHistory& history,
                     const nlohmann::json& metadata = nlohmann::json::object());
struct LoadedVae {
  std::unique_ptr<Vae<float>> model;
  std::string fingerprint;
  nlohmann::json metadata;
  TrainHistory history;
};
LoadedVae load_vae(const std::filesystem::path& dir, const std::vector<unsigned char>& cell_mask);

}  // namespace vaednn
