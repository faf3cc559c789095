#include "vaednn/latent_surrogate.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "vaednn/container.hpp"
#include "vaednn/nn/checkpoint.hpp"

namespace vaednn {

using nn::Matrix;

void to_json(nlohmann::json& j, const MapConfig& c) {
  j = {{"in_dim", c.in_dim}, {"out_dim", c.out_dim}, {"hidden", c.hidden}, {"activation", "tanh"}};
}

void from_json(const nlohmann::json& j, MapConfig& c) {
  c = MapConfig{};
  c.in_dim = j.value("in_dim", c.in_dim);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.hidden = j.value("hidden", c.hidden);
  if (j.value("activation", std::string("tanh")) != "tanh") {
    throw Error(ErrorKind::invalid_config, "latent map supports only tanh hidden activations");
  }
}

template <class T>
LatentMap<T>::LatentMap(const MapConfig& cfg) : cfg_(cfg) {
  if (cfg.in_dim < 1 || cfg.out_dim < 1) throw Error(ErrorKind::invalid_config, "latent map widths must be positive");
  int width = cfg.in_dim;
  for (int h : cfg.hidden) {
    if (h < 1) throw Error(ErrorKind::invalid_config, "hidden widths must be positive");
    net_.template add<nn::Dense<T>>(width, h);
    net_.add_tanh();
    width = h;
  }
  net_.template add<nn::Dense<T>>(width, cfg.out_dim);
}

template <class T>
void LatentMap<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  net_.initialize(rng);
}

template <class T>
double map_objective(LatentMap<T>& map, const Matrix<T>& mu_y, const Matrix<T>& mu_h, bool backward, Matrix<T>* d_in) {
  if (mu_y.rows() != mu_h.rows()) throw Error(ErrorKind::length_mismatch, "latent pair arrays differ in length");
  if (mu_h.cols() != map.config().out_dim) throw Error(ErrorKind::shape_mismatch, "target latent width mismatch");
  const Matrix<T> diff = map.forward(mu_y) - mu_h;
  const double batch = static_cast<double>(mu_y.rows());
  const double loss = static_cast<double>(diff.squaredNorm()) / batch;
  if (backward) {
    Matrix<T> dx = map.backward(diff * static_cast<T>(2.0 / batch));
    if (d_in) *d_in = std::move(dx);
  }
  return loss;
}

LatentPairDataset build_latent_dataset(LoadedVae& y_vae, LoadedVae& h_vae, const NdArray<float>& y_norm,
                                       const NdArray<float>& h_norm) {
  const auto ys = y_vae.metadata.value("stats_fingerprint", std::string());
  const auto hs = h_vae.metadata.value("stats_fingerprint", std::string());
  if (ys != hs) {
    throw Error(ErrorKind::fingerprint_mismatch,
                "y-VAE and h-VAE were trained on different normalizations (" + ys + " vs " + hs + ")");
  }
  if (y_norm.dim(0) != h_norm.dim(0)) throw Error(ErrorKind::length_mismatch, "y and h sample counts differ");
  LatentPairDataset out;
  out.mu_y = encode_means(*y_vae.model, as_batch_matrix(y_norm));
  out.mu_h = encode_means(*h_vae.model, as_batch_matrix(h_norm));
  out.y_encoder_fingerprint = y_vae.fingerprint;
  out.h_encoder_fingerprint = h_vae.fingerprint;
  out.stats_fingerprint = ys;
  return out;
}

TrainHistory train_map(LatentMap<float>& map, const LatentPairDataset& train, const LatentPairDataset* validation,
                       const TrainConfig& cfg) {
  if (train.mu_y.rows() < 2) throw Error(ErrorKind::insufficient_samples, "latent map training needs at least 2 pairs");
  if (train.mu_y.cols() != map.config().in_dim) throw Error(ErrorKind::shape_mismatch, "source latent width mismatch");
  map.set_param_grads(true);
  auto step = [&](const std::vector<std::size_t>& idx) {
    return map_objective(map, gather_rows(train.mu_y, idx), gather_rows(train.mu_h, idx), true);
  };
  auto validate = [&] {
    return validation && validation->mu_y.rows() > 0 ? map_objective(map, validation->mu_y, validation->mu_h, false)
                                                     : std::numeric_limits<double>::quiet_NaN();
  };
  return run_minibatch_training(static_cast<std::size_t>(train.mu_y.rows()), cfg, map.parameters(), step, validate,
                                "latent map");
}

namespace {

std::string map_fingerprint(LatentMap<float>& map) {
  return nn::parameter_fingerprint(map.parameters(), nlohmann::json(map.config()).dump());
}

}  // namespace

std::string save_map(const std::filesystem::path& dir, LatentMap<float>& map, const TrainHistory& history,
                     const LatentPairDataset& source, const nlohmann::json& metadata) {
  Container c;
  c.kind = "latent_map";
  c.fingerprint = map_fingerprint(map);
  c.metadata = metadata;
  c.metadata["config"] = map.config();
  c.metadata["history"] = history;
  c.metadata["parameter_count"] = map.parameter_count();
  c.metadata["y_encoder_fingerprint"] = source.y_encoder_fingerprint;
  c.metadata["h_encoder_fingerprint"] = source.h_encoder_fingerprint;
  c.metadata["stats_fingerprint"] = source.stats_fingerprint;
  nn::store_parameters(c, "map", map.parameters());
  save_container(dir, c);
  return c.fingerprint;
}

LoadedMap load_map(const std::filesystem::path& dir) {
  const auto c = load_container(dir);
  if (c.kind != "latent_map") throw Error(ErrorKind::corrupt_container, dir.string() + " is not a latent map");
  LoadedMap out;
  out.model = std::make_unique<LatentMap<float>>(c.metadata.at("config").get<MapConfig>());
  nn::restore_parameters(c, "map", out.model->parameters());
  if (map_fingerprint(*out.model) != c.fingerprint) {
    throw Error(ErrorKind::corrupt_container, "latent map in " + dir.string() + " does not match its fingerprint");
  }
  out.fingerprint = c.fingerprint;
  out.metadata = c.metadata;
  out.history = c.metadata.at("history").get<TrainHistory>();
  return out;
}

void to_json(nlohmann::json& j, const BundlePaths& p) {
  j = {{"y_vae", p.y_vae.generic_string()},
       {"map", p.map.generic_string()},
       {"h_vae", p.h_vae.generic_string()},
       {"stats", p.stats.generic_string()}};
}

void from_json(const nlohmann::json& j, BundlePaths& p) {
  for (const char* key : {"y_vae", "map", "h_vae", "stats"}) {
    if (!j.contains(key)) throw Error(ErrorKind::invalid_config, std::string("bundle manifest lacks '") + key + "'");
  }
  p.y_vae = j.at("y_vae").get<std::string>();
  p.map = j.at("map").get<std::string>();
  p.h_vae = j.at("h_vae").get<std::string>();
  p.stats = j.at("stats").get<std::string>();
}

void save_bundle_manifest(const std::filesystem::path& file, const BundlePaths& p) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + file.string());
  out << nlohmann::json(p).dump(2) << "\n";
}

BundlePaths load_bundle_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::missing_checkpoint, "bundle manifest " + file.string() + " not found");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_config, "bundle manifest " + file.string() + ": " + e.what());
  }
  auto p = j.get<BundlePaths>();
  const auto base = file.parent_path();
  for (auto* path : {&p.y_vae, &p.map, &p.h_vae, &p.stats})
    if (path->is_relative()) *path = base / *path;
  return p;
}

namespace {

void require_present(const std::filesystem::path& dir, const std::string& component) {
  if (!container_exists(dir)) {
    throw Error(ErrorKind::missing_checkpoint, component + " checkpoint not found at " + dir.string());
  }
}

void require_equal(const std::string& have, const std::string& want, const std::string& what) {
  if (have != want) throw Error(ErrorKind::fingerprint_mismatch, what + " (" + have + " vs " + want + ")");
}

}  // namespace

std::unique_ptr<SurrogateBundle> SurrogateBundle::assemble(const BundlePaths& paths, const ActiveMask& mask) {
  require_present(paths.y_vae, "y-VAE");
  require_present(paths.map, "latent map");
  require_present(paths.h_vae, "h-VAE");
  require_present(paths.stats, "normalization statistics");
  std::unique_ptr<SurrogateBundle> b(new SurrogateBundle());
  b->mask_ = mask;
  b->stats_ = load_norm_stats(paths.stats);
  b->y_ = load_vae(paths.y_vae, mask.values());
  b->h_ = load_vae(paths.h_vae, mask.values());
  b->map_ = load_map(paths.map);
  if (b->y_.model->config().variant != VaeVariant::y) throw Error(ErrorKind::invalid_config, "y-VAE slot holds an h-VAE");
  if (b->h_.model->config().variant != VaeVariant::h) throw Error(ErrorKind::invalid_config, "h-VAE slot holds a y-VAE");

  const auto stats_fp = norm_stats_fingerprint(b->stats_);
  require_equal(b->y_.metadata.value("stats_fingerprint", std::string()), stats_fp,
                "y-VAE was trained on different normalization statistics");
  require_equal(b->h_.metadata.value("stats_fingerprint", std::string()), stats_fp,
                "h-VAE was trained on different normalization statistics");
  require_equal(b->map_.metadata.value("y_encoder_fingerprint", std::string()), b->y_.fingerprint,
                "latent map was trained on a different y-VAE");
  require_equal(b->map_.metadata.value("h_encoder_fingerprint", std::string()), b->h_.fingerprint,
                "latent map was trained on a different h-VAE");
  const auto& mc = b->map_.model->config();
  if (mc.in_dim != b->y_.model->config().latent_dim || mc.out_dim != b->h_.model->config().latent_dim) {
    throw Error(ErrorKind::shape_mismatch, "latent map widths do not match the VAE latent sizes");
  }
  return b;
}

StateField SurrogateBundle::predict(const Field2D& y) const {
  if (y.rank() != 2 || y.dim(0) != static_cast<std::size_t>(mask_.n_x1()) ||
      y.dim(1) != static_cast<std::size_t>(mask_.n_x2())) {
    throw Error(ErrorKind::shape_mismatch, "predict expects a field shaped " +
                                               shape_string({static_cast<std::size_t>(mask_.n_x1()),
                                                             static_cast<std::size_t>(mask_.n_x2())}));
  }
  const auto yn = normalize(y, stats_.y_mean, stats_.y_std, mask_);
  Matrix<float> x(1, static_cast<Eigen::Index>(yn.size()));
  for (std::size_t k = 0; k < yn.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = static_cast<float>(yn[k]);
  Matrix<float> hn;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const Matrix<float> mu = y_.model->encode(x).mu;
    hn = h_.model->decode(map_.model->forward(mu));
  }
  const auto& hm = stats_.h_mean.shape();
  NdArray<double> h({hm[0], hm[1], hm[2]});
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = hn(0, static_cast<Eigen::Index>(k));
  return denormalize(h, stats_.h_mean, stats_.h_std, mask_);
}

std::size_t SurrogateBundle::parameter_count() const {
  return y_.model->parameter_count() + map_.model->parameter_count() + h_.model->parameter_count();
}

nlohmann::json SurrogateBundle::fingerprints() const {
  return {{"y_vae", y_.fingerprint},
          {"map", map_.fingerprint},
          {"h_vae", h_.fingerprint},
          {"stats", norm_stats_fingerprint(stats_)}};
}

template class LatentMap<float>;
template class LatentMap<double>;
template double map_objective(LatentMap<float>&, const Matrix<float>&, const Matrix<float>&, bool, Matrix<float>*);
template double map_objective(LatentMap<double>&, const Matrix<double>&, const Matrix<double>&, bool, Matrix<double>*);

}  // namespace vaednn
