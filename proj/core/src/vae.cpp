#include "vaednn/vae.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "vaednn/container.hpp"
#include "vaednn/nn/checkpoint.hpp"
#include "vaednn/nn/optim.hpp"

namespace vaednn {

using nn::Matrix;
using nn::Shape3;

VaeConfig VaeConfig::y_default() { return VaeConfig{}; }

VaeConfig VaeConfig::h_default() {
  VaeConfig c;
  c.variant = VaeVariant::h;
  c.in_channels = 24;
  c.filters = {24, 48, 96};
  c.latent_dim = 90;
  c.pooling = nn::PoolKind::max;
  c.ffl_enabled = true;
  return c;
}

void to_json(nlohmann::json& j, const VaeConfig& c) {
  j = {{"variant", c.variant == VaeVariant::y ? "y" : "h"},
       {"in_channels", c.in_channels},
       {"n_x1", c.n_x1},
       {"n_x2", c.n_x2},
       {"filters", c.filters},
       {"latent_dim", c.latent_dim},
       {"pooling", c.pooling == nn::PoolKind::average ? "average" : "max"},
       {"beta", c.beta},
       {"ffl_alpha", c.ffl_alpha},
       {"ffl_weight_max", c.ffl_weight_max},
       {"ffl_enabled", c.ffl_enabled}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
  const std::string variant = j.value("variant", std::string("y"));
  if (variant != "y" && variant != "h") throw Error(ErrorKind::invalid_config, "VAE variant must be 'y' or 'h'");
  c = variant == "y" ? VaeConfig::y_default() : VaeConfig::h_default();
  c.in_channels = j.value("in_channels", c.in_channels);
  c.n_x1 = j.value("n_x1", c.n_x1);
  c.n_x2 = j.value("n_x2", c.n_x2);
  c.filters = j.value("filters", c.filters);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("pooling")) {
    const auto p = j.at("pooling").get<std::string>();
    if (p == "average") c.pooling = nn::PoolKind::average;
    else if (p == "max") c.pooling = nn::PoolKind::max;
    else throw Error(ErrorKind::invalid_config, "pooling must be 'average' or 'max'");
  }
  c.beta = j.value("beta", c.beta);
  c.ffl_alpha = j.value("ffl_alpha", c.ffl_alpha);
  c.ffl_weight_max = j.value("ffl_weight_max", c.ffl_weight_max);
  c.ffl_enabled = j.value("ffl_enabled", c.ffl_enabled);
}

namespace {

int flat_size(const VaeConfig& c) {
  if (c.filters.size() != 3) throw Error(ErrorKind::invalid_config, "VAE needs exactly three filter counts");
  if (c.n_x1 % 4 || c.n_x2 % 4) throw Error(ErrorKind::invalid_config, "VAE grid sizes must be divisible by 4");
  if (c.latent_dim < 1 || c.in_channels < 1) throw Error(ErrorKind::invalid_config, "VAE sizes must be positive");
  return c.filters[2] * (c.n_x1 / 4) * (c.n_x2 / 4);
}

}  // namespace

template <class T>
Vae<T>::Vae(const VaeConfig& cfg, const std::vector<unsigned char>& cell_mask)
    : cfg_(cfg),
      cell_mask_(cell_mask),
      mean_head_(flat_size(cfg), cfg.latent_dim),
      logvar_head_(flat_size(cfg), cfg.latent_dim),
      dft_(cfg.n_x1, cfg.n_x2) {
  const int plane = cfg.n_x1 * cfg.n_x2;
  if (static_cast<int>(cell_mask.size()) != plane) throw Error(ErrorKind::shape_mismatch, "VAE mask does not match grid");
  plane_mask_.resize(plane);
  for (int q = 0; q < plane; ++q) plane_mask_[q] = cell_mask[static_cast<std::size_t>(q)] ? T(1) : T(0);
  loss_mask_.resize(features());
  for (int c = 0; c < cfg.in_channels; ++c) loss_mask_.segment(c * plane, plane) = plane_mask_;

  const auto& f = cfg.filters;
  const Shape3 in{cfg.in_channels, cfg.n_x1, cfg.n_x2};
  encoder_.template add<nn::MaskLayer<T>>(in, cell_mask);
  encoder_.template add<nn::Conv2d<T>>(in, f[0], 3);
  encoder_.add_tanh();
  encoder_.template add<nn::Pool2d<T>>(encoder_.output_shape(), cfg.pooling);
  encoder_.template add<nn::Conv2d<T>>(encoder_.output_shape(), f[1], 3);
  encoder_.add_tanh();
  encoder_.template add<nn::Pool2d<T>>(encoder_.output_shape(), cfg.pooling);
  encoder_.template add<nn::Conv2d<T>>(encoder_.output_shape(), f[2], 3);
  encoder_.add_tanh();
  const Shape3 bottleneck = encoder_.output_shape();
  const Shape3 flat{bottleneck.size(), 1, 1};
  encoder_.template add<nn::Reshape<T>>(bottleneck, flat);

  decoder_.template add<nn::Dense<T>>(cfg.latent_dim, flat.c);
  decoder_.template add<nn::Reshape<T>>(flat, bottleneck);
  if (cfg.variant == VaeVariant::y) {
    decoder_.template add<nn::ConvTranspose2d<T>>(bottleneck, f[1], 3, 1, 1, 0);
    decoder_.add_tanh();
    decoder_.template add<nn::ConvTranspose2d<T>>(decoder_.output_shape(), f[0], 3, 2, 1, 1);
    decoder_.add_tanh();
    decoder_.template add<nn::ConvTranspose2d<T>>(decoder_.output_shape(), cfg.in_channels, 3, 2, 1, 1);
  } else {
    decoder_.template add<nn::ConvTranspose2d<T>>(bottleneck, f[1], 4, 2, 1, 0);
    decoder_.add_tanh();
    decoder_.template add<nn::ConvTranspose2d<T>>(decoder_.output_shape(), f[0], 4, 2, 1, 0);
    decoder_.add_tanh();
    decoder_.template add<nn::Conv2d<T>>(decoder_.output_shape(), cfg.in_channels, 3);
  }
  if (!(decoder_.output_shape() == in)) {
    throw Error(ErrorKind::invalid_config, "decoder output " + decoder_.output_shape().str() + " differs from input " +
                                               in.str());
  }
}

template <class T>
typename Vae<T>::Latent Vae<T>::encode(const Matrix<T>& x) {
  const Matrix<T> hidden = encoder_.forward(x);
  return {mean_head_.forward(hidden), logvar_head_.forward(hidden)};
}

template <class T>
Matrix<T> Vae<T>::encode_backward(const Matrix<T>& d_mu, const Matrix<T>& d_logvar) {
  Matrix<T> g = mean_head_.backward(d_mu);
  g += logvar_head_.backward(d_logvar);
  return encoder_.backward(g);
}

template <class T>
Matrix<T> Vae<T>::decode(const Matrix<T>& z) {
  if (z.cols() != cfg_.latent_dim) throw Error(ErrorKind::shape_mismatch, "latent width mismatch");
  return decoder_.forward(z);
}

template <class T>
Matrix<T> Vae<T>::decode_backward(const Matrix<T>& d_out) {
  return decoder_.backward(d_out);
}

template <class T>
std::vector<nn::Parameter<T>*> Vae<T>::encoder_parameters() {
  auto p = encoder_.parameters();
  for (auto* q : mean_head_.parameters()) p.push_back(q);
  for (auto* q : logvar_head_.parameters()) p.push_back(q);
  return p;
}

template <class T>
std::vector<nn::Parameter<T>*> Vae<T>::decoder_parameters() {
  return decoder_.parameters();
}

template <class T>
std::vector<nn::Parameter<T>*> Vae<T>::parameters() {
  auto p = encoder_parameters();
  for (auto* q : decoder_parameters()) p.push_back(q);
  return p;
}

template <class T>
void Vae<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  encoder_.initialize(rng);
  mean_head_.initialize(rng);
  logvar_head_.initialize(rng);
  decoder_.initialize(rng);
}

template <class T>
void Vae<T>::set_param_grads(bool on) {
  encoder_.set_param_grads(on);
  decoder_.set_param_grads(on);
  mean_head_.param_grads = on;
  logvar_head_.param_grads = on;
}

template <class T>
void Vae<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <class T>
std::size_t Vae<T>::parameter_count() {
  return nn::parameter_count(parameters());
}

namespace {

template <class T>
void list_layers(const nn::Sequential<T>& seq, const std::string& part, std::vector<LayerRow>& rows) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& l = seq.layer(i);
    const std::string kind = l.kind();
    if (kind == "Mask") continue;
    if (kind == "Tanh") {
      if (!rows.empty()) rows.back().activation = "Tanh";
      continue;
    }
    LayerRow r{part, kind, l.kernel(), "...", l.input_shape(), l.output_shape(), "..."};
    if (kind == "Conv2D" || kind == "ConvTranspose2D") {
      r.filters = std::to_string(l.output_shape().c);
      r.activation = "Linear";
    } else if (kind == "Dense") {
      r.activation = "Linear";
    }
    rows.push_back(r);
  }
}

}  // namespace

template <class T>
std::vector<LayerRow> Vae<T>::architecture() const {
  std::vector<LayerRow> rows;
  list_layers(encoder_, "Encoder", rows);
  rows.push_back({"Encoder", "Dense (mean)", "...", "...", mean_head_.input_shape(), mean_head_.output_shape(), "Linear"});
  rows.push_back(
      {"Encoder", "Dense (log var)", "...", "...", logvar_head_.input_shape(), logvar_head_.output_shape(), "Linear"});
  list_layers(decoder_, "Decoder", rows);
  return rows;
}

template <class T>
Matrix<T> reparameterize(const Matrix<T>& mu, const Matrix<T>& logvar, const Matrix<T>& eps) {
  if (mu.rows() != eps.rows() || mu.cols() != eps.cols() || logvar.rows() != mu.rows() || logvar.cols() != mu.cols()) {
    throw Error(ErrorKind::shape_mismatch, "reparameterize: mu/log_var/eps shapes differ");
  }
  return mu + ((T(0.5) * logvar.array()).exp() * eps.array()).matrix();
}

template <class T>
VaeLossParts vae_objective(Vae<T>& model, const Matrix<T>& x, const Matrix<T>& eps, bool backward) {
  const auto& cfg = model.config();
  auto lat = model.encode(x);
  const Matrix<T> z = reparameterize(lat.mu, lat.logvar, eps);
  const Matrix<T> recon = model.decode(z);
  auto e = nn::elbo_loss(x, recon, lat.mu, lat.logvar, model.loss_mask(), cfg.beta);
  VaeLossParts parts{e.total, e.recon, e.kl, 0.0};
  Matrix<T> d_recon = std::move(e.d_recon);
  if (cfg.ffl_enabled) {
    auto f = nn::focal_frequency_loss(recon, x, cfg.in_channels, model.plane_mask(), model.dft(), cfg.ffl_alpha,
                                      cfg.ffl_weight_max);
    parts.ffl = f.loss;
    parts.total += f.loss;
    d_recon += f.d_recon;
  }
  if (backward) {
    const Matrix<T> dz = model.decode_backward(d_recon);
    const Matrix<T> d_mu = e.d_mu + dz;
    const Matrix<T> d_lv =
        e.d_logvar + (dz.array() * eps.array() * (T(0.5) * lat.logvar.array()).exp() * T(0.5)).matrix();
    model.encode_backward(d_mu, d_lv);
  }
  return parts;
}

Matrix<float> as_batch_matrix(const NdArray<float>& a) {
  if (a.rank() < 2 || a.dim(0) == 0) throw Error(ErrorKind::shape_mismatch, "expected a non-empty (N, ...) array");
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  return Eigen::Map<const Matrix<float>>(a.data(), n, static_cast<Eigen::Index>(a.size()) / n);
}

Matrix<float> gather_rows(const Matrix<float>& m, const std::vector<std::size_t>& rows) {
  Matrix<float> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

TrainHistory train_vae(Vae<float>& model, const NdArray<float>& train, const NdArray<float>* validation,
                       const TrainConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const Matrix<float> x = as_batch_matrix(train);
  if (x.cols() != model.features()) throw Error(ErrorKind::shape_mismatch, "training data does not match the VAE input");
  Matrix<float> xv;
  if (validation) xv = as_batch_matrix(*validation);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  model.set_param_grads(true);
  nn::Adam<float> opt(model.parameters(), cfg.learning_rate);
  TrainHistory history;
  const auto t_start = clock::now();
  const int latent = model.config().latent_dim;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    double sum = 0, sum_recon = 0, sum_kl = 0, sum_ffl = 0;
    for (const auto& idx : make_batches(static_cast<std::size_t>(x.rows()), cfg.batch_size, rng)) {
      const Matrix<float> xb = gather_rows(x, idx);
      Matrix<float> eps(xb.rows(), latent);
      for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = normal(rng);
      opt.zero_grad();
      const auto parts = vae_objective(model, xb, eps, true);
      if (!std::isfinite(parts.total)) {
        history.seconds = std::chrono::duration<double>(clock::now() - t_start).count();
        throw DivergenceError("non-finite VAE loss at epoch " + std::to_string(epoch), history);
      }
      opt.step();
      const double w = static_cast<double>(idx.size());
      sum += parts.total * w;
      sum_recon += parts.recon * w;
      sum_kl += parts.kl * w;
      sum_ffl += parts.ffl * w;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const double n = static_cast<double>(x.rows());
    rec.train_loss = sum / n;
    rec.parts = {{"recon", sum_recon / n}, {"kl", sum_kl / n}, {"ffl", sum_ffl / n}};
    rec.validation_loss = std::numeric_limits<double>::quiet_NaN();
    if (xv.rows() > 0) {
      double vs = 0;
      for (Eigen::Index s = 0; s < xv.rows(); s += 64) {
        const Eigen::Index len = std::min<Eigen::Index>(64, xv.rows() - s);
        const Matrix<float> xb = xv.middleRows(s, len);
        vs += vae_objective(model, xb, Matrix<float>(Matrix<float>::Zero(len, latent)), false).total * static_cast<double>(len);
      }
      rec.validation_loss = vs / static_cast<double>(xv.rows());
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (cfg.on_epoch && !cfg.on_epoch(rec)) break;
  }
  history.seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return history;
}

Matrix<float> encode_means(Vae<float>& model, const Matrix<float>& x, int batch) {
  Matrix<float> mu(x.rows(), model.config().latent_dim);
  for (Eigen::Index s = 0; s < x.rows(); s += batch) {
    const Eigen::Index len = std::min<Eigen::Index>(batch, x.rows() - s);
    mu.middleRows(s, len) = model.encode(x.middleRows(s, len)).mu;
  }
  return mu;
}

namespace {

const char* vae_kind(const VaeConfig& c) { return c.variant == VaeVariant::y ? "yvae" : "hvae"; }

std::string vae_fingerprint(Vae<float>& model) {
  return nn::parameter_fingerprint(model.parameters(), nlohmann::json(model.config()).dump());
}

}  // namespace

std::string save_vae(const std::filesystem::path& dir, Vae<float>& model, const TrainHistory& history,
                     const nlohmann::json& metadata) {
  Container c;
  c.kind = vae_kind(model.config());
  c.fingerprint = vae_fingerprint(model);
  c.metadata = metadata;
  c.metadata["config"] = model.config();
  c.metadata["history"] = history;
  c.metadata["parameter_count"] = model.parameter_count();
  nn::store_parameters(c, "vae", model.parameters());
  save_container(dir, c);
  return c.fingerprint;
}

LoadedVae load_vae(const std::filesystem::path& dir, const std::vector<unsigned char>& cell_mask) {
  const auto c = load_container(dir);
  if (c.kind != "yvae" && c.kind != "hvae") {
    throw Error(ErrorKind::corrupt_container, dir.string() + " holds a '" + c.kind + "', not a VAE");
  }
  LoadedVae out;
  const auto cfg = c.metadata.at("config").get<VaeConfig>();
  out.model = std::make_unique<Vae<float>>(cfg, cell_mask);
  nn::restore_parameters(c, "vae", out.model->parameters());
  out.fingerprint = c.fingerprint;
  if (vae_fingerprint(*out.model) != c.fingerprint) {
    throw Error(ErrorKind::corrupt_container, "VAE parameters in " + dir.string() + " do not match their fingerprint");
  }
  out.metadata = c.metadata;
  out.history = c.metadata.at("history").get<TrainHistory>();
  return out;
}

template class Vae<float>;
template class Vae<double>;
template Matrix<float> reparameterize(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&);
template Matrix<double> reparameterize(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&);
template VaeLossParts vae_objective(Vae<float>&, const Matrix<float>&, const Matrix<float>&, bool);
template VaeLossParts vae_objective(Vae<double>&, const Matrix<double>&, const Matrix<double>&, bool);

}  // namespace vaednn
