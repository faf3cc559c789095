/**
 * @file latent_surrogate.hpp
 * @brief Latent-to-latent map between the y-VAE and h-VAE codes, and the
 *        composed forward surrogate y -> h assembled from three checkpoints.
 */
#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/dataset.hpp"
#include "vaednn/nn/layers.hpp"
#include "vaednn/training.hpp"
#include "vaednn/vae.hpp"

namespace vaednn {

struct MapConfig {
  int in_dim = 150;
  int out_dim = 90;
  std::vector<int> hidden = {500, 500};
  bool operator==(const MapConfig&) const = default;
};

void to_json(nlohmann::json& j, const MapConfig& c);
void from_json(const nlohmann::json& j, MapConfig& c);

/// Fully connected network with tanh hidden layers and a linear output.
template <class T>
class LatentMap {
 public:
  explicit LatentMap(const MapConfig& cfg);
  nn::Matrix<T> forward(const nn::Matrix<T>& mu_y) { return net_.forward(mu_y); }
  nn::Matrix<T> backward(const nn::Matrix<T>& d_out) { return net_.backward(d_out); }
  std::vector<nn::Parameter<T>*> parameters() { return net_.parameters(); }
  void initialize(std::uint64_t seed);
  void set_param_grads(bool on) { net_.set_param_grads(on); }
  void zero_grad() { net_.zero_grad(); }
  std::size_t parameter_count() { return nn::parameter_count(parameters()); }
  const MapConfig& config() const noexcept { return cfg_; }

 private:
  MapConfig cfg_;
  nn::Sequential<T> net_;
};

/// Mean over the batch of ||map(mu_y) - mu_h||^2. With `backward` the
/// parameter gradients are accumulated and d/d(mu_y) is returned via `d_in`.
template <class T>
double map_objective(LatentMap<T>& map, const nn::Matrix<T>& mu_y, const nn::Matrix<T>& mu_h, bool backward,
                     nn::Matrix<T>* d_in = nullptr);

struct LatentPairDataset {
  nn::Matrix<float> mu_y;  ///< (N, latent_y)
  nn::Matrix<float> mu_h;  ///< (N, latent_h)
  std::string y_encoder_fingerprint;
  std::string h_encoder_fingerprint;
  std::string stats_fingerprint;
};

/// Encoder means of normalized y (N, n1, n2) and h (N, N_t, n1, n2). Both
/// checkpoints must carry the same normalization fingerprint.
LatentPairDataset build_latent_dataset(LoadedVae& y_vae, LoadedVae& h_vae, const NdArray<float>& y_norm,
                                       const NdArray<float>& h_norm);

TrainHistory train_map(LatentMap<float>& map, const LatentPairDataset& train, const LatentPairDataset* validation,
                       const TrainConfig& cfg);

std::string save_map(const std::filesystem::path& dir, LatentMap<float>& map, const TrainHistory& history,
                     const LatentPairDataset& source, const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedMap {
  std::unique_ptr<LatentMap<float>> model;
  std::string fingerprint;
  nlohmann::json metadata;
  TrainHistory history;
};
LoadedMap load_map(const std::filesystem::path& dir);

/// Locations of the four artifacts a bundle is assembled from.
struct BundlePaths {
  std::filesystem::path y_vae, map, h_vae, stats;
};
void to_json(nlohmann::json& j, const BundlePaths& p);
void from_json(const nlohmann::json& j, BundlePaths& p);
void save_bundle_manifest(const std::filesystem::path& file, const BundlePaths& p);
/// Relative paths in the manifest resolve against its directory.
BundlePaths load_bundle_manifest(const std::filesystem::path& file);

/// Encoder of the y-VAE, latent map and decoder of the h-VAE, checked for
/// mutual consistency on assembly. Inference is serialized internally, so a
/// bundle may be shared between threads.
class SurrogateBundle {
 public:
  /// Throws missing-checkpoint naming the absent component, or
  /// fingerprint-mismatch naming the inconsistent pair.
  static std::unique_ptr<SurrogateBundle> assemble(const BundlePaths& paths, const ActiveMask& mask);

  /// Raw (unnormalized) y (n1, n2) to heads (N_t, n1, n2); inactive cells -1.
  StateField predict(const Field2D& y) const;

  Vae<float>& y_vae() { return *y_.model; }
  Vae<float>& h_vae() { return *h_.model; }
  LatentMap<float>& map() { return *map_.model; }
  const NormStats& stats() const noexcept { return stats_; }
  const ActiveMask& mask() const noexcept { return mask_; }
  std::size_t parameter_count() const;
  nlohmann::json fingerprints() const;

 private:
  SurrogateBundle() = default;
  LoadedVae y_, h_;
  LoadedMap map_;
  NormStats stats_;
  ActiveMask mask_;
  mutable std::mutex mutex_;
};

}  // namespace vaednn
