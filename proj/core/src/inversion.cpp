#include "vaednn/inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "vaednn/container.hpp"
#include "vaednn/metrics.hpp"
#include "vaednn/nn/optim.hpp"

namespace vaednn {

namespace {

using nn::Matrix;

double norm_value(double x, double mean, double sd) { return sd > kStdFloor ? (x - mean) / sd : 0.0; }

template <class T>
Matrix<T> row_of(const Eigen::VectorXd& v) {
  return v.transpose().cast<T>();
}

/// Data misfit terms from residuals; writes d(term)/d(residual) into dr.
double misfit(const Eigen::VectorXd& r, double weight, Eigen::VectorXd& dr) {
  if (r.size() == 0) {
    dr.resize(0);
    return 0.0;
  }
  const double n = static_cast<double>(r.size());
  dr = (2.0 * weight / n) * r;
  return weight * r.squaredNorm() / n;
}

/// Restores parameter-gradient accumulation when leaving scope.
template <class M>
struct FrozenParams {
  M& m;
  explicit FrozenParams(M& model) : m(model) { m.set_param_grads(false); }
  ~FrozenParams() { m.set_param_grads(true); }
};

void check_plane(const NdArray<double>& a, const ActiveMask& mask, const char* what) {
  const auto r = a.rank();
  if (r < 2 || a.dim(r - 2) != static_cast<std::size_t>(mask.n_x1()) ||
      a.dim(r - 1) != static_cast<std::size_t>(mask.n_x2())) {
    throw Error(ErrorKind::shape_mismatch, std::string(what) + " grid does not match the mask");
  }
}

}  // namespace

// ------------------------------------------------------------------ observations

void to_json(nlohmann::json& j, const ObservationSet& o) {
  j = {{"wells", o.wells}, {"y", o.y},           {"times", o.times},           {"h", o.h},
       {"noise_free", o.noise_free}, {"y_noise_std", o.y_noise_std}, {"h_noise_std", o.h_noise_std}};
}

void from_json(const nlohmann::json& j, ObservationSet& o) {
  o = ObservationSet{};
  j.at("wells").get_to(o.wells);
  j.at("y").get_to(o.y);
  j.at("times").get_to(o.times);
  j.at("h").get_to(o.h);
  o.noise_free = j.value("noise_free", true);
  o.y_noise_std = j.value("y_noise_std", 1.0);
  o.h_noise_std = j.value("h_noise_std", 1.0);
  if (o.y.size() != o.wells.size() || o.h.size() != o.wells.size() * o.times.size()) {
    throw Error(ErrorKind::length_mismatch, "observation counts do not match the well list");
  }
}

ObservationSet sample_observations(const Field2D& y_ref, const StateField& h_ref, const std::vector<CellIndex>& wells,
                                   const ActiveMask& mask, const std::vector<int>& times) {
  check_plane(y_ref, mask, "y_ref");
  check_plane(h_ref, mask, "h_ref");
  if (y_ref.rank() != 2 || h_ref.rank() != 3) throw Error(ErrorKind::shape_mismatch, "expected y (n1, n2) and h (N_t, n1, n2)");
  std::set<CellIndex> seen;
  for (const auto& w : wells) {
    if (!mask.contains(w)) {
      throw Error(ErrorKind::inactive_well, "well (" + std::to_string(w.i) + ", " + std::to_string(w.j) + ") is not an active cell");
    }
    if (!seen.insert(w).second) {
      throw Error(ErrorKind::duplicate_well, "well (" + std::to_string(w.i) + ", " + std::to_string(w.j) + ") listed twice");
    }
  }
  const int n_t = static_cast<int>(h_ref.dim(0));
  ObservationSet o;
  o.wells = wells;
  if (times.empty()) {
    for (int t = 0; t < n_t; ++t) o.times.push_back(t);
  } else {
    for (int t : times) {
      if (t < 0 || t >= n_t) throw Error(ErrorKind::invalid_config, "observation time " + std::to_string(t) + " out of range");
    }
    o.times = times;
  }
  const std::size_t plane = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  for (const auto& w : wells) o.y.push_back(y_ref(w.i, w.j));
  for (int t : o.times)
    for (const auto& w : wells) {
      o.h.push_back(h_ref[static_cast<std::size_t>(t) * plane + static_cast<std::size_t>(mask.n_x2() * w.i + w.j)]);
    }
  return o;
}

NormalizedObservations normalize_observations(const ObservationSet& obs, const NormStats& stats,
                                              const ActiveMask& mask) {
  if (obs.y.size() != obs.wells.size() || obs.h.size() != obs.wells.size() * obs.times.size()) {
    throw Error(ErrorKind::length_mismatch, "observation counts do not match the well list");
  }
  const int plane = mask.n_x1() * mask.n_x2();
  const int n_t = stats.h_mean.rank() == 3 ? static_cast<int>(stats.h_mean.dim(0)) : 0;
  NormalizedObservations n;
  n.y.resize(static_cast<Eigen::Index>(obs.y.size()));
  n.h.resize(static_cast<Eigen::Index>(obs.h.size()));
  for (std::size_t w = 0; w < obs.wells.size(); ++w) {
    const auto c = obs.wells[w];
    if (!mask.contains(c)) throw Error(ErrorKind::inactive_well, "observation well outside the active domain");
    const int f = mask.n_x2() * c.i + c.j;
    n.y_cells.push_back(f);
    n.y[static_cast<Eigen::Index>(w)] = norm_value(obs.y[w], stats.y_mean[f], stats.y_std[f]);
  }
  Eigen::Index k = 0;
  for (std::size_t ti = 0; ti < obs.times.size(); ++ti) {
    const int t = obs.times[ti];
    if (t < 0 || t >= n_t) throw Error(ErrorKind::invalid_config, "observation time beyond the surrogate horizon");
    for (std::size_t w = 0; w < obs.wells.size(); ++w, ++k) {
      const int f = n.y_cells[w];
      const auto e = static_cast<std::size_t>(t * plane + f);
      n.h_points.emplace_back(t, f);
      n.h[k] = norm_value(obs.h[static_cast<std::size_t>(k)], stats.h_mean[e], stats.h_std[e]);
    }
  }
  if (!obs.noise_free) {
    if (!(obs.y_noise_std > 0) || !(obs.h_noise_std > 0)) throw Error(ErrorKind::invalid_config, "noise std must be positive");
    n.y_weight = 1.0 / (obs.y_noise_std * obs.y_noise_std);
    n.h_weight = 1.0 / (obs.h_noise_std * obs.h_noise_std);
  }
  return n;
}

// ------------------------------------------------------------------ config

const char* to_string(InverseMethod m) noexcept {
  switch (m) {
    case InverseMethod::vaednn: return "vaednn";
    case InverseMethod::fno: return "fno";
    case InverseMethod::deeponet: return "deeponet";
  }
  return "?";
}

InverseMethod inverse_method_from_string(const std::string& s) {
  if (s == "vaednn" || s == "vae-dnn") return InverseMethod::vaednn;
  if (s == "fno") return InverseMethod::fno;
  if (s == "deeponet") return InverseMethod::deeponet;
  throw Error(ErrorKind::invalid_config, "unknown inversion method '" + s + "'");
}

void to_json(nlohmann::json& j, const InverseConfig& c) {
  j = {{"gamma", c.gamma},
       {"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"method", to_string(c.method)},
       {"optimizer", "adam"},
       {"initialization", "zero"}};
}

void from_json(const nlohmann::json& j, InverseConfig& c) {
  c.gamma = j.value("gamma", c.gamma);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("method")) c.method = inverse_method_from_string(j.at("method").get<std::string>());
  if (!(c.gamma >= 0)) throw Error(ErrorKind::invalid_config, "gamma must be >= 0");
  if (c.steps < 1) throw Error(ErrorKind::invalid_config, "steps must be >= 1");
  if (!(c.learning_rate > 0)) throw Error(ErrorKind::invalid_config, "learning_rate must be > 0");
}

// ------------------------------------------------------------------ VAE-DNN

template <class T>
VaeDnnObjective<T>::VaeDnnObjective(Vae<T>& y_vae, LatentMap<T>& map, Vae<T>& h_vae, const NormStats& stats,
                                    const ActiveMask& mask, const ObservationSet& obs, double gamma)
    : y_vae_(y_vae), map_(map), h_vae_(h_vae), stats_(stats), mask_(mask),
      obs_(normalize_observations(obs, stats, mask)), gamma_(gamma) {
  if (map.config().in_dim != y_vae.config().latent_dim || map.config().out_dim != h_vae.config().latent_dim) {
    throw Error(ErrorKind::shape_mismatch, "latent map widths do not match the VAEs");
  }
  for (const auto& [t, f] : obs_.h_points) {
    if (t >= h_vae.config().in_channels) throw Error(ErrorKind::invalid_config, "observation time beyond the h-VAE channels");
  }
}

template <class T>
ObjectiveTerms VaeDnnObjective<T>::evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  if (v.size() != dim()) throw Error(ErrorKind::length_mismatch, "latent vector length");
  FrozenParams fy(y_vae_), fm(map_), fh(h_vae_);
  const int plane = mask_.n_x1() * mask_.n_x2();
  const Matrix<T> z = row_of<T>(v);
  const Matrix<T> yd = y_vae_.decode(z);
  const Matrix<T> hd = h_vae_.decode(map_.forward(z));

  Eigen::VectorXd ry(obs_.y.size()), rh(obs_.h.size()), dry, drh;
  for (Eigen::Index k = 0; k < ry.size(); ++k) ry[k] = static_cast<double>(yd(0, obs_.y_cells[k])) - obs_.y[k];
  for (Eigen::Index k = 0; k < rh.size(); ++k) {
    const auto [t, f] = obs_.h_points[static_cast<std::size_t>(k)];
    rh[k] = static_cast<double>(hd(0, t * plane + f)) - obs_.h[k];
  }
  ObjectiveTerms terms;
  terms.y_misfit = misfit(ry, obs_.y_weight, dry);
  terms.h_misfit = misfit(rh, obs_.h_weight, drh);
  terms.regularization = gamma_ * v.squaredNorm();
  terms.total = terms.h_misfit + terms.y_misfit + terms.regularization;

  if (grad) {
    Matrix<T> dyd = Matrix<T>::Zero(1, yd.cols()), dhd = Matrix<T>::Zero(1, hd.cols());
    for (Eigen::Index k = 0; k < ry.size(); ++k) dyd(0, obs_.y_cells[k]) += static_cast<T>(dry[k]);
    for (Eigen::Index k = 0; k < rh.size(); ++k) {
      const auto [t, f] = obs_.h_points[static_cast<std::size_t>(k)];
      dhd(0, t * plane + f) += static_cast<T>(drh[k]);
    }
    const Matrix<T> gz_h = map_.backward(h_vae_.decode_backward(dhd));
    const Matrix<T> gz_y = y_vae_.decode_backward(dyd);
    *grad = (gz_h + gz_y).transpose().template cast<double>();
    *grad += 2.0 * gamma_ * v;
  }
  return terms;
}

template <class T>
Field2D VaeDnnObjective<T>::reconstruct(const Eigen::VectorXd& v) {
  const Matrix<T> yd = y_vae_.decode(row_of<T>(v));
  Field2D yn({static_cast<std::size_t>(mask_.n_x1()), static_cast<std::size_t>(mask_.n_x2())});
  for (std::size_t k = 0; k < yn.size(); ++k) yn[k] = static_cast<double>(yd(0, static_cast<Eigen::Index>(k)));
  return denormalize(yn, stats_.y_mean, stats_.y_std, mask_);
}

// ------------------------------------------------------------------ FNO

template <class T>
FnoObjective<T>::FnoObjective(Fno<T>& model, const NormStats& stats, const ActiveMask& mask, const ObservationSet& obs,
                              double gamma)
    : model_(model), stats_(stats), mask_(mask), obs_(normalize_observations(obs, stats, mask)), gamma_(gamma) {
  for (const auto& [t, f] : obs_.h_points) {
    if (t >= model.config().out_channels) throw Error(ErrorKind::invalid_config, "observation time beyond the FNO output");
  }
}

template <class T>
ObjectiveTerms FnoObjective<T>::evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  if (v.size() != dim()) throw Error(ErrorKind::length_mismatch, "active-cell vector length");
  FrozenParams frozen(model_);
  const int plane = mask_.n_x1() * mask_.n_x2();
  const auto& active = mask_.active_cells();
  Matrix<T> y = Matrix<T>::Zero(1, plane);
  for (std::size_t a = 0; a < active.size(); ++a) y(0, active[a]) = static_cast<T>(v[static_cast<Eigen::Index>(a)]);
  const Matrix<T> hp = model_.forward(y);

  Eigen::VectorXd ry(obs_.y.size()), rh(obs_.h.size()), dry, drh;
  for (Eigen::Index k = 0; k < ry.size(); ++k) ry[k] = static_cast<double>(y(0, obs_.y_cells[k])) - obs_.y[k];
  for (Eigen::Index k = 0; k < rh.size(); ++k) {
    const auto [t, f] = obs_.h_points[static_cast<std::size_t>(k)];
    rh[k] = static_cast<double>(hp(0, t * plane + f)) - obs_.h[k];
  }
  ObjectiveTerms terms;
  terms.y_misfit = misfit(ry, obs_.y_weight, dry);
  terms.h_misfit = misfit(rh, obs_.h_weight, drh);
  terms.regularization = gamma_ * v.squaredNorm();
  terms.total = terms.h_misfit + terms.y_misfit + terms.regularization;

  if (grad) {
    Matrix<T> dhp = Matrix<T>::Zero(1, hp.cols());
    for (Eigen::Index k = 0; k < rh.size(); ++k) {
      const auto [t, f] = obs_.h_points[static_cast<std::size_t>(k)];
      dhp(0, t * plane + f) += static_cast<T>(drh[k]);
    }
    const Matrix<T> dy = model_.backward(dhp);
    Eigen::VectorXd g(dim());
    const auto& pos = mask_.active_position();
    for (std::size_t a = 0; a < active.size(); ++a) g[static_cast<Eigen::Index>(a)] = static_cast<double>(dy(0, active[a]));
    for (Eigen::Index k = 0; k < ry.size(); ++k) g[pos[static_cast<std::size_t>(obs_.y_cells[k])]] += dry[k];
    *grad = g + 2.0 * gamma_ * v;
  }
  return terms;
}

template <class T>
Field2D FnoObjective<T>::reconstruct(const Eigen::VectorXd& v) {
  Field2D yn({static_cast<std::size_t>(mask_.n_x1()), static_cast<std::size_t>(mask_.n_x2())});
  const auto& active = mask_.active_cells();
  for (std::size_t a = 0; a < active.size(); ++a) yn[static_cast<std::size_t>(active[a])] = v[static_cast<Eigen::Index>(a)];
  return denormalize(yn, stats_.y_mean, stats_.y_std, mask_);
}

// ------------------------------------------------------------------ DeepONet

template <class T>
DeepONetObjective<T>::DeepONetObjective(DeepONet<T>& model, const KleBasis& basis, const NormStats& stats,
                                        const ActiveMask& mask, const ObservationSet& obs, double gamma)
    : model_(model), basis_(basis), mask_(mask), obs_(normalize_observations(obs, stats, mask)), gamma_(gamma) {
  const int n_xi = model.config().n_xi;
  if (basis.stored_modes() < n_xi) throw Error(ErrorKind::length_mismatch, "KLE basis stores fewer modes than the branch input");
  if (basis.n_x1 != mask.n_x1() || basis.n_x2 != mask.n_x2()) throw Error(ErrorKind::shape_mismatch, "KLE grid does not match the mask");
  std::vector<int> pos(static_cast<std::size_t>(mask.n_x1() * mask.n_x2()), -1);
  for (std::size_t k = 0; k < basis.active_cells.size(); ++k) pos[static_cast<std::size_t>(basis.active_cells[k])] = static_cast<int>(k);

  const auto ny = static_cast<Eigen::Index>(obs_.y_cells.size());
  y_map_ = Eigen::MatrixXd::Zero(ny, n_xi);
  y_offset_ = Eigen::VectorXd::Zero(ny);
  for (Eigen::Index k = 0; k < ny; ++k) {
    const int f = obs_.y_cells[static_cast<std::size_t>(k)];
    const double sd = stats.y_std[static_cast<std::size_t>(f)];
    if (!(sd > kStdFloor)) continue;
    const int p = pos[static_cast<std::size_t>(f)];
    if (p < 0) throw Error(ErrorKind::inactive_well, "observation well outside the KLE support");
    y_offset_[k] = (basis.mean[static_cast<std::size_t>(f)] - stats.y_mean[static_cast<std::size_t>(f)]) / sd;
    for (int i = 0; i < n_xi; ++i) {
      y_map_(k, i) = std::sqrt(std::max(basis.eigenvalues[i], 0.0)) * basis.eigenfunctions(i, p) / sd;
    }
  }
  for (const auto& [t, f] : obs_.h_points) {
    if (t >= model.config().n_t) throw Error(ErrorKind::invalid_config, "observation time beyond the DeepONet horizon");
  }
  coords_ = deeponet_coordinates(mask, model.config().n_t, obs_.h_points).template cast<T>();
}

template <class T>
ObjectiveTerms DeepONetObjective<T>::evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  if (v.size() != dim()) throw Error(ErrorKind::length_mismatch, "KLE coefficient vector length");
  ObjectiveTerms terms;
  Eigen::VectorXd ry = y_offset_ + y_map_ * v - obs_.y, rh(obs_.h.size()), dry, drh;
  Matrix<T> hp;
  if (rh.size() > 0) {
    FrozenParams frozen(model_);
    hp = model_.forward(row_of<T>(v), coords_);
    for (Eigen::Index k = 0; k < rh.size(); ++k) rh[k] = static_cast<double>(hp(0, k)) - obs_.h[k];
  }
  terms.y_misfit = misfit(ry, obs_.y_weight, dry);
  terms.h_misfit = misfit(rh, obs_.h_weight, drh);
  terms.regularization = gamma_ * v.squaredNorm();
  terms.total = terms.h_misfit + terms.y_misfit + terms.regularization;

  if (grad) {
    Eigen::VectorXd g = 2.0 * gamma_ * v;
    if (dry.size() > 0) g += y_map_.transpose() * dry;
    if (rh.size() > 0) {
      FrozenParams frozen(model_);
      const Matrix<T> dxi = model_.backward(row_of<T>(drh));
      g += dxi.transpose().template cast<double>();
    }
    *grad = g;
  }
  return terms;
}

template <class T>
Field2D DeepONetObjective<T>::reconstruct(const Eigen::VectorXd& v) {
  return kle_reconstruct(basis_, v);
}

// ------------------------------------------------------------------ optimizer

InverseResult minimize(InverseObjective& objective, const InverseConfig& cfg, const Field2D* y_ref,
                       const ActiveMask* mask) {
  if (!(cfg.gamma >= 0)) throw Error(ErrorKind::invalid_config, "gamma must be >= 0");
  if (cfg.steps < 1) throw Error(ErrorKind::invalid_config, "steps must be >= 1");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  objective.set_gamma(cfg.gamma);

  nn::Parameter<double> var;
  var.name = "v";
  var.value = nn::Matrix<double>::Zero(1, objective.dim());
  var.zero_grad();
  nn::Adam<double> opt({&var}, cfg.learning_rate);

  InverseResult r;
  r.method = cfg.method;
  r.config = cfg;
  r.trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(objective.dim()), g;
  Eigen::VectorXd best = v;
  for (int step = 0; step <= cfg.steps; ++step) {
    const ObjectiveTerms terms = objective.evaluate(v, step < cfg.steps ? &g : nullptr);
    if (!std::isfinite(terms.total) || (step < cfg.steps && !g.allFinite())) {
      throw InversionDivergence("non-finite inverse objective at step " + std::to_string(step), r.trace);
    }
    r.trace.push_back(terms.total);
    if (step == 0) {
      r.initial = terms;
      r.final = terms;
    } else if (terms.total < r.final.total) {
      r.final = terms;
      r.best_step = step;
      best = v;
    }
    if (step == cfg.steps) break;
    var.grad = g.transpose();
    opt.step();
    v = var.value.transpose();
  }
  r.estimate = best;
  r.y = objective.reconstruct(best);
  if (y_ref && mask) r.rl2_y = relative_l2(r.y, *y_ref, *mask);
  r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return r;
}

InverseResult invert_vaednn(SurrogateBundle& bundle, const ObservationSet& obs, const InverseConfig& cfg,
                            const Field2D* y_ref) {
  VaeDnnObjective<float> f(bundle.y_vae(), bundle.map(), bundle.h_vae(), bundle.stats(), bundle.mask(), obs, cfg.gamma);
  InverseConfig c = cfg;
  c.method = InverseMethod::vaednn;
  return minimize(f, c, y_ref, &bundle.mask());
}

InverseResult invert_fno(Fno<float>& model, const NormStats& stats, const ActiveMask& mask, const ObservationSet& obs,
                         const InverseConfig& cfg, const Field2D* y_ref) {
  FnoObjective<float> f(model, stats, mask, obs, cfg.gamma);
  InverseConfig c = cfg;
  c.method = InverseMethod::fno;
  return minimize(f, c, y_ref, &mask);
}

InverseResult invert_deeponet(DeepONet<float>& model, const KleBasis& basis, const NormStats& stats,
                              const ActiveMask& mask, const ObservationSet& obs, const InverseConfig& cfg,
                              const Field2D* y_ref) {
  DeepONetObjective<float> f(model, basis, stats, mask, obs, cfg.gamma);
  InverseConfig c = cfg;
  c.method = InverseMethod::deeponet;
  return minimize(f, c, y_ref, &mask);
}

std::vector<SweepRow> gamma_sweep(InverseObjective& objective, std::vector<double> gammas, const InverseConfig& cfg,
                                  const Field2D* y_ref, const ActiveMask* mask) {
  if (gammas.empty()) throw Error(ErrorKind::invalid_config, "gamma sweep needs at least one value");
  std::sort(gammas.begin(), gammas.end());
  std::vector<SweepRow> rows;
  for (double g : gammas) {
    SweepRow row;
    row.gamma = g;
    InverseConfig c = cfg;
    c.gamma = g;
    try {
      row.result = minimize(objective, c, y_ref, mask);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
      row.result.config = c;
      row.result.method = c.method;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"gamma", r.gamma}, {"ok", r.ok}};
    if (r.ok) {
      j["rl2_y"] = r.result.rl2_y ? nlohmann::json(*r.result.rl2_y) : nlohmann::json(nullptr);
      j["final_loss"] = r.result.final.total;
      j["initial_loss"] = r.result.initial.total;
      j["seconds"] = r.result.seconds;
    } else {
      j["error"] = r.error;
    }
    out.push_back(std::move(j));
  }
  return out;
}

// ------------------------------------------------------------------ persistence

namespace {

nlohmann::json terms_json(const ObjectiveTerms& t) {
  return {{"total", t.total}, {"h_misfit", t.h_misfit}, {"y_misfit", t.y_misfit}, {"regularization", t.regularization}};
}

ObjectiveTerms terms_from(const nlohmann::json& j) {
  return {j.at("total").get<double>(), j.at("h_misfit").get<double>(), j.at("y_misfit").get<double>(),
          j.at("regularization").get<double>()};
}

}  // namespace

void save_inverse_result(const std::filesystem::path& dir, const InverseResult& r, const nlohmann::json& metadata) {
  Container c;
  c.kind = "inverse_result";
  c.put("estimate", Shape{static_cast<std::size_t>(r.estimate.size())},
        std::vector<float>(r.estimate.data(), r.estimate.data() + r.estimate.size()));
  c.put("y", r.y);
  c.metadata = metadata;
  c.metadata["method"] = to_string(r.method);
  c.metadata["config"] = r.config;
  c.metadata["trace"] = r.trace;
  c.metadata["initial"] = terms_json(r.initial);
  c.metadata["final"] = terms_json(r.final);
  c.metadata["best_step"] = r.best_step;
  c.metadata["rl2_y"] = r.rl2_y ? nlohmann::json(*r.rl2_y) : nlohmann::json(nullptr);
  c.metadata["seconds"] = r.seconds;
  // exact estimate, the float32 array is for external readers
  c.metadata["estimate"] = std::vector<double>(r.estimate.data(), r.estimate.data() + r.estimate.size());
  save_container(dir, c);
}

InverseResult load_inverse_result(const std::filesystem::path& dir) {
  const Container c = load_container(dir);
  if (c.kind != "inverse_result") throw Error(ErrorKind::corrupt_container, "not an inversion result: " + dir.string());
  InverseResult r;
  const auto& m = c.metadata;
  r.method = inverse_method_from_string(m.at("method").get<std::string>());
  r.config = m.at("config").get<InverseConfig>();
  r.trace = m.at("trace").get<std::vector<double>>();
  r.initial = terms_from(m.at("initial"));
  r.final = terms_from(m.at("final"));
  r.best_step = m.at("best_step").get<int>();
  if (!m.at("rl2_y").is_null()) r.rl2_y = m.at("rl2_y").get<double>();
  r.seconds = m.at("seconds").get<double>();
  const auto est = m.at("estimate").get<std::vector<double>>();
  r.estimate = Eigen::Map<const Eigen::VectorXd>(est.data(), static_cast<Eigen::Index>(est.size()));
  r.y = c.get<double>("y");
  return r;
}

template class VaeDnnObjective<float>;
template class VaeDnnObjective<double>;
template class FnoObjective<float>;
template class FnoObjective<double>;
template class DeepONetObjective<float>;
template class DeepONetObjective<double>;

}  // namespace vaednn
