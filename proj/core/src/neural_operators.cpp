#include "vaednn/neural_operators.hpp"

#include <limits>

#include "vaednn/container.hpp"
#include "vaednn/nn/checkpoint.hpp"
#include "vaednn/nn/losses.hpp"
#include "vaednn/vae.hpp"

namespace vaednn {

using nn::Matrix;
using nn::Shape3;

namespace {

template <class Model>
std::string model_fingerprint(Model& m) {
  return nn::parameter_fingerprint(m.parameters(), nlohmann::json(m.config()).dump());
}

template <class Model>
std::string save_model(const std::filesystem::path& dir, const char* kind, Model& m, const TrainHistory& history,
                       const nlohmann::json& metadata) {
  Container c;
  c.kind = kind;
  c.fingerprint = model_fingerprint(m);
  c.metadata = metadata;
  c.metadata["config"] = m.config();
  c.metadata["history"] = history;
  c.metadata["parameter_count"] = m.parameter_count();
  nn::store_parameters(c, kind, m.parameters());
  save_container(dir, c);
  return c.fingerprint;
}

template <class Loaded, class Make>
Loaded load_model(const std::filesystem::path& dir, const char* kind, Make make) {
  const auto c = load_container(dir);
  if (c.kind != kind) throw Error(ErrorKind::corrupt_container, dir.string() + " holds a '" + c.kind + "', not " + kind);
  Loaded out;
  out.model = make(c.metadata.at("config"));
  nn::restore_parameters(c, kind, out.model->parameters());
  if (model_fingerprint(*out.model) != c.fingerprint) {
    throw Error(ErrorKind::corrupt_container, std::string(kind) + " in " + dir.string() + " does not match its fingerprint");
  }
  out.fingerprint = c.fingerprint;
  out.metadata = c.metadata;
  out.history = c.metadata.at("history").get<TrainHistory>();
  return out;
}

/// Loss over `x`, `y` rows evaluated in slices, weighted by slice length.
template <class Eval>
double batched_mean(Eigen::Index n, Eigen::Index batch, Eval eval) {
  double sum = 0;
  for (Eigen::Index s = 0; s < n; s += batch) {
    const Eigen::Index len = std::min(batch, n - s);
    sum += eval(s, len) * static_cast<double>(len);
  }
  return sum / static_cast<double>(n);
}

void check_field(const Field2D& y, const ActiveMask& mask) {
  if (y.rank() != 2 || y.dim(0) != static_cast<std::size_t>(mask.n_x1()) ||
      y.dim(1) != static_cast<std::size_t>(mask.n_x2())) {
    throw Error(ErrorKind::shape_mismatch, "expected a y field shaped (" + std::to_string(mask.n_x1()) + "," +
                                               std::to_string(mask.n_x2()) + "), got " + shape_string(y.shape()));
  }
}

}  // namespace

// ------------------------------------------------------------------ FNO

void to_json(nlohmann::json& j, const FnoConfig& c) {
  j = {{"n_x1", c.n_x1},
       {"n_x2", c.n_x2},
       {"width", c.width},
       {"modes1", c.modes1},
       {"modes2", c.modes2},
       {"n_layers", c.n_layers},
       {"out_channels", c.out_channels},
       {"projection_hidden", c.projection_hidden},
       {"local_bias", c.local_bias},
       {"activate_last", c.activate_last}};
}

void from_json(const nlohmann::json& j, FnoConfig& c) {
  c = FnoConfig{};
  c.n_x1 = j.value("n_x1", c.n_x1);
  c.n_x2 = j.value("n_x2", c.n_x2);
  c.width = j.value("width", c.width);
  c.modes1 = j.value("modes1", c.modes1);
  c.modes2 = j.value("modes2", c.modes2);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.projection_hidden = j.value("projection_hidden", c.projection_hidden);
  c.local_bias = j.value("local_bias", c.local_bias);
  c.activate_last = j.value("activate_last", c.activate_last);
}

template <class T>
Fno<T>::Fno(const FnoConfig& cfg, const std::vector<unsigned char>& cell_mask) : cfg_(cfg) {
  const int plane = cfg.n_x1 * cfg.n_x2;
  if (static_cast<int>(cell_mask.size()) != plane) throw Error(ErrorKind::shape_mismatch, "FNO mask does not match grid");
  if (cfg.width < 1 || cfg.n_layers < 1 || cfg.out_channels < 1 || cfg.projection_hidden < 0) {
    throw Error(ErrorKind::invalid_config, "FNO sizes must be positive");
  }
  if (cfg.modes1 < 1 || cfg.modes2 < 1 || 2 * cfg.modes1 > cfg.n_x1 || 2 * cfg.modes2 > cfg.n_x2) {
    throw Error(ErrorKind::invalid_config, "FNO modes must lie in [1, grid/2]");
  }
  plane_mask_.resize(plane);
  coord1_.resize(plane);
  coord2_.resize(plane);
  for (int i = 0; i < cfg.n_x1; ++i)
    for (int j = 0; j < cfg.n_x2; ++j) {
      const int q = i * cfg.n_x2 + j;
      plane_mask_(q) = cell_mask[static_cast<std::size_t>(q)] ? T(1) : T(0);
      coord1_(q) = cfg.n_x1 > 1 ? static_cast<T>(i) / static_cast<T>(cfg.n_x1 - 1) : T(0);
      coord2_(q) = cfg.n_x2 > 1 ? static_cast<T>(j) / static_cast<T>(cfg.n_x2 - 1) : T(0);
    }
  loss_mask_.resize(cfg.out_channels * plane);
  for (int c = 0; c < cfg.out_channels; ++c) loss_mask_.segment(c * plane, plane) = plane_mask_;

  const Shape3 feat{cfg.width, cfg.n_x1, cfg.n_x2};
  net_.template add<nn::PointwiseConv<T>>(Shape3{3, cfg.n_x1, cfg.n_x2}, cfg.width);
  for (int k = 0; k < cfg.n_layers; ++k) {
    const bool act = k + 1 < cfg.n_layers || cfg.activate_last;
    net_.template add<nn::FourierLayer<T>>(feat, cfg.modes1, cfg.modes2, act, cfg.local_bias);
  }
  if (cfg.projection_hidden > 0) {
    net_.template add<nn::PointwiseConv<T>>(feat, cfg.projection_hidden);
    net_.add_tanh();
  }
  net_.template add<nn::PointwiseConv<T>>(net_.output_shape(), cfg.out_channels);
}

template <class T>
Matrix<T> Fno<T>::input_channels(const Matrix<T>& y) const {
  const int plane = cfg_.n_x1 * cfg_.n_x2;
  if (y.cols() != plane) throw Error(ErrorKind::shape_mismatch, "FNO input width mismatch");
  Matrix<T> x(y.rows(), 3 * plane);
  for (Eigen::Index b = 0; b < y.rows(); ++b) {
    x.row(b).segment(0, plane) = y.row(b).cwiseProduct(plane_mask_);
    x.row(b).segment(plane, plane) = coord1_;
    x.row(b).segment(2 * plane, plane) = coord2_;
  }
  return x;
}

template <class T>
Matrix<T> Fno<T>::forward(const Matrix<T>& y) {
  return net_.forward(input_channels(y));
}

template <class T>
Matrix<T> Fno<T>::backward(const Matrix<T>& d_out) {
  const int plane = cfg_.n_x1 * cfg_.n_x2;
  const Matrix<T> dx = net_.backward(d_out);
  return (dx.leftCols(plane).array().rowwise() * plane_mask_.array()).matrix();
}

template <class T>
Matrix<T> Fno<T>::lift(const Matrix<T>& y) {
  return net_.layer(0).forward(input_channels(y));
}

template <class T>
nn::FourierLayer<T>& Fno<T>::fourier_layer(int k) {
  if (k < 0 || k >= cfg_.n_layers) throw Error(ErrorKind::invalid_config, "Fourier layer index out of range");
  return dynamic_cast<nn::FourierLayer<T>&>(net_.layer(static_cast<std::size_t>(k) + 1));
}

template <class T>
void Fno<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  net_.initialize(rng);
}

template <class T>
double fno_objective(Fno<T>& model, const Matrix<T>& y, const Matrix<T>& h, bool backward, Matrix<T>* d_y) {
  const Matrix<T> pred = model.forward(y);
  Matrix<T> grad;
  const double loss = nn::masked_mse<T>(pred, h, model.loss_mask(), backward ? &grad : nullptr);
  if (backward) {
    Matrix<T> dy = model.backward(grad);
    if (d_y) *d_y = std::move(dy);
  }
  return loss;
}

TrainHistory train_fno(Fno<float>& model, const OperatorData& train, const OperatorData* validation,
                       const TrainConfig& cfg) {
  const Matrix<float> y = as_batch_matrix(train.y), h = as_batch_matrix(train.h);
  if (y.rows() != h.rows()) throw Error(ErrorKind::length_mismatch, "FNO y and h sample counts differ");
  Matrix<float> yv, hv;
  if (validation) {
    yv = as_batch_matrix(validation->y);
    hv = as_batch_matrix(validation->h);
  }
  model.set_param_grads(true);
  auto step = [&](const std::vector<std::size_t>& idx) {
    return fno_objective(model, gather_rows(y, idx), gather_rows(h, idx), true);
  };
  auto validate = [&] {
    if (yv.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
    return batched_mean(yv.rows(), cfg.batch_size, [&](Eigen::Index s, Eigen::Index len) {
      return fno_objective<float>(model, yv.middleRows(s, len), hv.middleRows(s, len), false);
    });
  };
  return run_minibatch_training(static_cast<std::size_t>(y.rows()), cfg, model.parameters(), step, validate, "FNO");
}

StateField fno_predict(Fno<float>& model, const NormStats& stats, const ActiveMask& mask, const Field2D& y) {
  check_field(y, mask);
  const auto& cfg = model.config();
  if (stats.h_mean.dim(0) != static_cast<std::size_t>(cfg.out_channels)) {
    throw Error(ErrorKind::shape_mismatch, "FNO output channels differ from the head statistics");
  }
  const auto yn = normalize(y, stats.y_mean, stats.y_std, mask);
  Matrix<float> x(1, static_cast<Eigen::Index>(yn.size()));
  for (std::size_t k = 0; k < yn.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = static_cast<float>(yn[k]);
  const Matrix<float> out = model.forward(x);
  NdArray<double> h(stats.h_mean.shape());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = out(0, static_cast<Eigen::Index>(k));
  return denormalize(h, stats.h_mean, stats.h_std, mask);
}

std::string save_fno(const std::filesystem::path& dir, Fno<float>& model, const TrainHistory& history,
                     const nlohmann::json& metadata) {
  return save_model(dir, "fno", model, history, metadata);
}

LoadedFno load_fno(const std::filesystem::path& dir, const std::vector<unsigned char>& cell_mask) {
  return load_model<LoadedFno>(dir, "fno", [&](const nlohmann::json& j) {
    return std::make_unique<Fno<float>>(j.get<FnoConfig>(), cell_mask);
  });
}

// ------------------------------------------------------------------ DeepONet

void to_json(nlohmann::json& j, const DeepONetConfig& c) {
  j = {{"n_xi", c.n_xi}, {"branch_hidden", c.branch_hidden}, {"trunk_hidden", c.trunk_hidden}, {"p", c.p}, {"n_t", c.n_t}};
}

void from_json(const nlohmann::json& j, DeepONetConfig& c) {
  c = DeepONetConfig{};
  c.n_xi = j.value("n_xi", c.n_xi);
  c.branch_hidden = j.value("branch_hidden", c.branch_hidden);
  c.trunk_hidden = j.value("trunk_hidden", c.trunk_hidden);
  c.p = j.value("p", c.p);
  c.n_t = j.value("n_t", c.n_t);
}

namespace {

template <class T>
void build_mlp(nn::Sequential<T>& s, int in, const std::vector<int>& hidden, int out) {
  int width = in;
  for (int h : hidden) {
    if (h < 1) throw Error(ErrorKind::invalid_config, "hidden widths must be positive");
    s.template add<nn::Dense<T>>(width, h);
    s.add_tanh();
    width = h;
  }
  s.template add<nn::Dense<T>>(width, out);
}

}  // namespace

template <class T>
DeepONet<T>::DeepONet(const DeepONetConfig& cfg) : cfg_(cfg) {
  if (cfg.n_xi < 1 || cfg.p < 1 || cfg.n_t < 1) throw Error(ErrorKind::invalid_config, "DeepONet sizes must be positive");
  build_mlp(branch_, cfg.n_xi, cfg.branch_hidden, cfg.p);
  build_mlp(trunk_, 3, cfg.trunk_hidden, cfg.p);
  b0_.name = "b0";
  b0_.value = Matrix<T>::Zero(1, 1);
  b0_.zero_grad();
}

template <class T>
Matrix<T> DeepONet<T>::forward(const Matrix<T>& xi, const Matrix<T>& coords) {
  if (xi.cols() != cfg_.n_xi) throw Error(ErrorKind::shape_mismatch, "branch input width mismatch");
  if (coords.cols() != 3) throw Error(ErrorKind::shape_mismatch, "trunk coordinates must be (P, 3)");
  bout_ = branch_.forward(xi);
  tout_ = trunk_.forward(coords);
  Matrix<T> out = bout_ * tout_.transpose();
  out.array() += b0_.value(0, 0);
  return out;
}

template <class T>
Matrix<T> DeepONet<T>::backward(const Matrix<T>& d_out) {
  if (trunk_.layer(0).param_grads) {
    b0_.grad(0, 0) += d_out.sum();
    trunk_.backward(d_out.transpose() * bout_);
  }
  return branch_.backward(d_out * tout_);
}

template <class T>
std::vector<nn::Parameter<T>*> DeepONet<T>::parameters() {
  auto p = branch_.parameters();
  for (auto* q : trunk_.parameters()) p.push_back(q);
  p.push_back(&b0_);
  return p;
}

template <class T>
void DeepONet<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  branch_.initialize(rng);
  trunk_.initialize(rng);
  b0_.value.setZero();
}

template <class T>
void DeepONet<T>::set_param_grads(bool on) {
  branch_.set_param_grads(on);
  trunk_.set_param_grads(on);
}

template <class T>
void DeepONet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Matrix<float> deeponet_coordinates(const ActiveMask& mask, int n_t) {
  std::vector<std::pair<int, int>> tc;
  for (int t = 0; t < n_t; ++t)
    for (int cell : mask.active_cells()) tc.emplace_back(t, cell);
  return deeponet_coordinates(mask, n_t, tc);
}

Matrix<float> deeponet_coordinates(const ActiveMask& mask, int n_t, const std::vector<std::pair<int, int>>& time_cell) {
  const int n1 = mask.n_x1(), n2 = mask.n_x2();
  Matrix<float> c(static_cast<Eigen::Index>(time_cell.size()), 3);
  for (std::size_t r = 0; r < time_cell.size(); ++r) {
    const auto [t, cell] = time_cell[r];
    const auto row = static_cast<Eigen::Index>(r);
    c(row, 0) = n1 > 1 ? static_cast<float>(cell / n2) / static_cast<float>(n1 - 1) : 0.0f;
    c(row, 1) = n2 > 1 ? static_cast<float>(cell % n2) / static_cast<float>(n2 - 1) : 0.0f;
    c(row, 2) = n_t > 1 ? static_cast<float>(t) / static_cast<float>(n_t - 1) : 0.0f;
  }
  return c;
}

Matrix<float> deeponet_targets(const NdArray<float>& h, const ActiveMask& mask) {
  if (h.rank() != 4) throw Error(ErrorKind::shape_mismatch, "expected heads shaped (N, N_t, n1, n2)");
  const auto n = static_cast<Eigen::Index>(h.dim(0));
  const auto nt = h.dim(1);
  const std::size_t plane = h.dim(2) * h.dim(3);
  const auto& cells = mask.active_cells();
  Matrix<float> out(n, static_cast<Eigen::Index>(nt * cells.size()));
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto sample = h.slice(static_cast<std::size_t>(s));
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t a = 0; a < cells.size(); ++a)
        out(s, static_cast<Eigen::Index>(t * cells.size() + a)) = sample[t * plane + static_cast<std::size_t>(cells[a])];
  }
  return out;
}

Matrix<float> kle_features(const KleBasis& basis, const NdArray<float>& y_raw, int n_xi) {
  const auto n = y_raw.dim(0);
  Matrix<float> out(static_cast<Eigen::Index>(n), n_xi);
  for (std::size_t s = 0; s < n; ++s) {
    const auto sl = y_raw.slice(s);
    const Field2D f({y_raw.dim(1), y_raw.dim(2)}, std::vector<double>(sl.begin(), sl.end()));
    out.row(static_cast<Eigen::Index>(s)) = kle_project(basis, f, n_xi).cast<float>().transpose();
  }
  return out;
}

template <class T>
double deeponet_objective(DeepONet<T>& model, const Matrix<T>& xi, const Matrix<T>& coords, const Matrix<T>& target,
                          bool backward, Matrix<T>* d_xi) {
  const Matrix<T> diff = model.forward(xi, coords) - target;
  if (diff.rows() != target.rows() || diff.cols() != target.cols()) {
    throw Error(ErrorKind::shape_mismatch, "DeepONet target shape mismatch");
  }
  const double denom = static_cast<double>(diff.size());
  if (backward) {
    Matrix<T> d = model.backward(diff * static_cast<T>(2.0 / denom));
    if (d_xi) *d_xi = std::move(d);
  }
  return static_cast<double>(diff.squaredNorm()) / denom;
}

TrainHistory train_deeponet(DeepONet<float>& model, const Matrix<float>& coords, const DeepONetData& train,
                            const DeepONetData* validation, const TrainConfig& cfg) {
  if (train.xi.rows() != train.target.rows()) throw Error(ErrorKind::length_mismatch, "DeepONet sample counts differ");
  model.set_param_grads(true);
  auto step = [&](const std::vector<std::size_t>& idx) {
    return deeponet_objective(model, gather_rows(train.xi, idx), coords, gather_rows(train.target, idx), true);
  };
  auto validate = [&] {
    if (!validation || validation->xi.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
    return batched_mean(validation->xi.rows(), cfg.batch_size, [&](Eigen::Index s, Eigen::Index len) {
      return deeponet_objective<float>(model, validation->xi.middleRows(s, len), coords,
                                       validation->target.middleRows(s, len), false);
    });
  };
  return run_minibatch_training(static_cast<std::size_t>(train.xi.rows()), cfg, model.parameters(), step, validate,
                                "DeepONet");
}

StateField deeponet_predict(DeepONet<float>& model, const KleBasis& basis, const NormStats& stats,
                            const ActiveMask& mask, const Field2D& y) {
  check_field(y, mask);
  const int nt = model.config().n_t;
  if (stats.h_mean.dim(0) != static_cast<std::size_t>(nt)) {
    throw Error(ErrorKind::shape_mismatch, "DeepONet snapshot count differs from the head statistics");
  }
  const Matrix<float> xi = kle_project(basis, y, model.config().n_xi).cast<float>().transpose();
  const Matrix<float> out = model.forward(xi, deeponet_coordinates(mask, nt));
  NdArray<double> h(stats.h_mean.shape());
  const auto& cells = mask.active_cells();
  const std::size_t plane = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  for (int t = 0; t < nt; ++t)
    for (std::size_t a = 0; a < cells.size(); ++a)
      h[static_cast<std::size_t>(t) * plane + static_cast<std::size_t>(cells[a])] =
          out(0, static_cast<Eigen::Index>(static_cast<std::size_t>(t) * cells.size() + a));
  return denormalize(h, stats.h_mean, stats.h_std, mask);
}

std::string save_deeponet(const std::filesystem::path& dir, DeepONet<float>& model, const TrainHistory& history,
                          const nlohmann::json& metadata) {
  return save_model(dir, "deeponet", model, history, metadata);
}

LoadedDeepONet load_deeponet(const std::filesystem::path& dir) {
  return load_model<LoadedDeepONet>(dir, "deeponet", [](const nlohmann::json& j) {
    return std::make_unique<DeepONet<float>>(j.get<DeepONetConfig>());
  });
}

void check_kle_fingerprint(const LoadedDeepONet& model, const KleBasis& basis) {
  const auto want = model.metadata.value("kle_fingerprint", std::string());
  if (want != basis.fingerprint()) {
    throw Error(ErrorKind::fingerprint_mismatch,
                "DeepONet was trained on KLE basis " + want + ", given " + basis.fingerprint());
  }
}

template class Fno<float>;
template class Fno<double>;
template class DeepONet<float>;
template class DeepONet<double>;
template double fno_objective(Fno<float>&, const Matrix<float>&, const Matrix<float>&, bool, Matrix<float>*);
template double fno_objective(Fno<double>&, const Matrix<double>&, const Matrix<double>&, bool, Matrix<double>*);
template double deeponet_objective(DeepONet<float>&, const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                   bool, Matrix<float>*);
template double deeponet_objective(DeepONet<double>&, const Matrix<double>&, const Matrix<double>&,
                                   const Matrix<double>&, bool, Matrix<double>*);

}  // namespace vaednn
