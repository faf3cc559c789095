// Acceptance suite: one pass/fail line per criterion.
//
// Criteria 1-6 and 10 run in-process on small or default configurations.
// Criteria 7-9 drive the full desk-scale experiment through the command-line
// tool, one OS process per stage, in a work directory that can be reused
// between invocations (--reuse skips stages whose run manifest exists).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ffl_oracle.hpp"
#include "gradcheck.hpp"
#include "toy_world.hpp"
#include "vaednn/bench.hpp"
#include "vaednn/gw_solver.hpp"
#include "vaednn/metrics.hpp"
#include "vaednn/nn/losses.hpp"
#include "vaednn/pipeline.hpp"

#ifndef VAEDNN_CLI_PATH
#define VAEDNN_CLI_PATH "vaednn"
#endif
#ifndef VAEDNN_ACCEPTANCE_WORKDIR
#define VAEDNN_ACCEPTANCE_WORKDIR "acceptance-work"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vaednn;
using namespace vaednn::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> lines;  ///< measured values, printed under the verdict

  void note(const std::string& s) { lines.push_back(s); }
  /// Records a named check and folds it into the verdict.
  bool check(bool ok, const std::string& s) {
    lines.push_back(std::string(ok ? "ok    " : "FAIL  ") + s);
    return ok;
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------------ 1

Domain strip(double recharge, double fixed_head) {
  DomainConfig c = DomainConfig::freyberg();
  c.grid.n_x1 = 40;
  c.grid.n_x2 = 1;
  c.mask_rows.assign(40, "1");
  auto& s = c.schedule;
  s.well_cells.clear();
  s.river_cells.clear();
  s.river_stage_offsets.clear();
  s.robin_cells = {{39, 0}};
  s.robin_conductance = 1e3;
  s.robin_external_head = fixed_head;
  for (auto& p : s.periods) {
    p.well_rates.clear();
    p.recharge_rate = recharge;
  }
  c.observation_wells.clear();
  return build_freyberg_domain(c);
}

/// h^2 = H^2 + (R / K)(L^2 - x^2): no flow at x = 0, h(L) = H.
double dupuit_rl2(const SolverConfig& cfg, double k, double r) {
  const double head = 16.0;
  const Domain d = strip(r, head);
  Field2D kf({40, 1}, k);
  const HeadField h = solve_steady(d, kf, r, cfg);
  const double len = 39.5 * d.grid.d_x1;
  double num = 0, den = 0;
  for (int i = 0; i < 40; ++i) {
    const double x = (i + 0.5) * d.grid.d_x1;
    const double exact = std::sqrt(head * head + r / k * (len * len - x * x));
    num += std::pow(h[static_cast<std::size_t>(i)] - exact, 2);
    den += exact * exact;
  }
  return std::sqrt(num / den);
}

Outcome solver_oracle() {
  Outcome o;
  const Domain d = build_freyberg_domain();
  const double k = std::exp(CovarianceModel::two_scale().mean_log_k);
  const double r = d.schedule.periods[0].recharge_rate;
  const auto t0 = std::chrono::steady_clock::now();
  const double rl2 = dupuit_rl2(SolverConfig{}, k, r);
  const double secs = seconds_since(t0);
  SolverConfig central;
  central.upstream_weighting = false;
  o.note("homogeneous K = " + fmt(k) + " m/s, recharge " + fmt(r) + " m/s, 40 cells");
  o.note("central thickness (reference): rl2 = " + fmt(dupuit_rl2(central, k, r)));
  o.pass = o.check(rl2 < 1e-2, "default solver rl2 = " + fmt(rl2) + " < 1e-2");
  o.pass &= o.check(secs < 5.0, "runtime " + fmt(secs, 3) + " s < 5 s");
  return o;
}

// ------------------------------------------------------------------ 2

Outcome conservation() {
  Outcome o;
  o.pass = true;
  const Domain d = build_freyberg_domain();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Field2D k = conductivity_from_log(d, sample_log_conductivity(d, CovarianceModel::two_scale(), seed));
    const HeadField h0 = solve_steady(d, k, d.schedule.periods[0].recharge_rate, SolverConfig{});
    const TransientResult r = solve_transient(d, k, h0, SolverConfig{});
    double worst = 0;
    for (const auto& p : r.budget.periods) worst = std::max(worst, p.residual() / p.inflow());
    o.pass &= o.check(worst <= 1e-3 && r.budget.periods.size() == 25,
                      "seed " + std::to_string(seed) + ": max residual / gross inflow over " +
                          std::to_string(r.budget.periods.size()) + " periods = " + fmt(worst));
  }
  return o;
}

// ------------------------------------------------------------------ 3

Outcome kle() {
  Outcome o;
  const Domain d = build_freyberg_domain();
  std::vector<Field2D> ens;
  for (std::uint64_t s = 0; s < 64; ++s) ens.push_back(sample_log_conductivity(d, CovarianceModel::two_scale(), 500 + s));
  const double rtol = 0.05;
  const KleBasis b = fit_kle(ens, d.mask, rtol);
  const Eigen::VectorXd& lam = b.eigenvalues;
  bool desc = true;
  for (Eigen::Index i = 1; i < lam.size(); ++i) desc &= lam[i] <= lam[i - 1];
  o.pass = o.check(desc && lam.minCoeff() >= -1e-10,
                   "eigenvalues descending, min " + fmt(lam.minCoeff()) + " >= -1e-10");

  double worst = 0;
  for (const auto& y : ens) {
    const Field2D back = kle_reconstruct(b, kle_project(b, y, b.stored_modes()));
    worst = std::max(worst, relative_l2(back, y, d.mask));
  }
  o.pass &= o.check(worst <= 1e-6, "full-rank (" + std::to_string(b.stored_modes()) +
                                       " modes) project/reconstruct rl2 = " + fmt(worst) + " <= 1e-6");

  const double total = lam.sum();
  auto tail = [&](int n) { return lam.tail(lam.size() - n).sum(); };
  const int n = b.n_xi;
  o.pass &= o.check(n >= 1 && tail(n) <= rtol * total && tail(n - 1) > rtol * total,
                    "truncation N = " + std::to_string(n) + ": tail(N)/total = " + fmt(tail(n) / total) +
                        ", tail(N-1)/total = " + fmt(tail(n - 1) / total) + " around rtol " + fmt(rtol));
  return o;
}

// ------------------------------------------------------------------ 4

Outcome gradients() {
  using namespace vaednn::nn;
  Outcome o;
  o.pass = true;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(41);

  {  // ELBO through a toy VAE, every parameter
    Vae<double> m(toy_vae(VaeVariant::y), toy_mask().values());
    m.initialize(3);
    Md x = random_matrix(2, m.features(), rng), eps = random_matrix(2, 3, rng);
    m.zero_grad();
    vae_objective(m, x, eps, true);
    auto f = [&] { return vae_objective(m, x, eps, false).total; };
    double worst = 0;
    for (auto* p : m.parameters()) worst = std::max(worst, fd_mismatch(f, p->value, Md(p->grad), 1e-5, 12));
    o.pass &= o.check(worst < 1e-4, "ELBO (toy y-VAE, all parameters): " + fmt(worst));
  }
  {  // FFL with the spectral weight held fixed at the evaluation point
    const int n1 = 4, n2 = 3, ch = 2;
    Dft2<double> dft(n1, n2);
    RowVector<double> mask = RowVector<double>::Ones(n1 * n2);
    mask(5) = 0.0;
    Md r = random_matrix(2, ch * n1 * n2, rng);
    const Md t = random_matrix(2, ch * n1 * n2, rng);
    const auto fl = focal_frequency_loss(r, t, ch, mask, dft, 1.0, 1e3);
    auto spectrum = [&](Md& re, Md& im) {
      Md diff(4, n1 * n2);
      for (int p = 0; p < 4; ++p)
        diff.row(p) = (t.row(p / 2).segment((p % 2) * n1 * n2, n1 * n2) - r.row(p / 2).segment((p % 2) * n1 * n2, n1 * n2))
                          .cwiseProduct(mask);
      dft.forward(diff, re, im);
    };
    Md re, im;
    spectrum(re, im);
    const Md w0 = (re.cwiseAbs2() + im.cwiseAbs2()).cwiseSqrt();
    auto frozen = [&] {
      Md a, b;
      spectrum(a, b);
      return (w0.array() * (a.cwiseAbs2() + b.cwiseAbs2()).array()).sum() / (4.0 * n1 * n2);
    };
    const double e = fd_mismatch(frozen, r, fl.d_recon);
    o.pass &= o.check(e < 1e-4, "FFL (fixed weight): " + fmt(e));
  }
  {  // latent map loss, inputs and parameters
    LatentMap<double> m(MapConfig{4, 3, {6, 5}});
    m.initialize(3);
    Md x = random_matrix(7, 4, rng), t = random_matrix(7, 3, rng), dx;
    m.zero_grad();
    map_objective(m, x, t, true, &dx);
    auto f = [&] { return map_objective(m, x, t, false); };
    double worst = fd_mismatch(f, x, dx);
    for (auto* p : m.parameters()) worst = std::max(worst, fd_mismatch(f, p->value, Md(p->grad)));
    o.pass &= o.check(worst < 1e-4, "map loss: " + fmt(worst));
  }
  World& w = world();
  for (auto m : kMethods) {
    auto j = w.make(m, 3e-2);
    double worst = 0;
    for (std::uint64_t s : {11u, 12u}) worst = std::max(worst, objective_fd_mismatch(*j, random_vector(j->dim(), s)));
    o.pass &= o.check(worst < 1e-4, std::string("inverse objective ") + to_string(m) + ": " + fmt(worst));
  }
  const double secs = seconds_since(t0);
  o.pass &= o.check(secs < 120, "total " + fmt(secs, 3) + " s < 120 s");
  return o;
}

// ------------------------------------------------------------------ 5

Outcome ffl_oracle() {
  using namespace vaednn::nn;
  Outcome o;
  o.pass = true;
  std::mt19937_64 rng(51);
  for (int n : {2, 4}) {
    const int ch = 2;
    std::vector<double> mask(static_cast<std::size_t>(n * n), 1.0);
    const RowVector<double> m = Eigen::Map<const RowVector<double>>(mask.data(), n * n);
    Dft2<double> dft(n, n);
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      const Md r = random_matrix(3, ch * n * n, rng), t = random_matrix(3, ch * n * n, rng);
      const double got = focal_frequency_loss(r, t, ch, m, dft, 1.0, 1e3).loss;
      const double ref = ffl_brute(r, t, ch, n, n, mask, 1.0, 1e3);
      worst = std::max(worst, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
    }
    o.pass &= o.check(worst <= 1e-10, std::to_string(n) + "x" + std::to_string(n) + " vs brute-force DFT: " + fmt(worst));
    const Md u = random_matrix(2, ch * n * n, rng);
    const double self = focal_frequency_loss(u, u, ch, m, dft, 1.0, 1e3).loss;
    o.pass &= o.check(self == 0.0, std::to_string(n) + "x" + std::to_string(n) + " ffl(u, u) = " + fmt(self));
  }
  return o;
}

// ------------------------------------------------------------------ 6

/// Sets every inactive entry of (rows, channels * plane) data to junk.
void scramble_inactive(Md& x, const ActiveMask& mask, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 50);
  const std::size_t plane = mask.values().size();
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (!mask.flat_active(static_cast<std::size_t>(c) % plane)) x(r, c) += n(rng);
}

template <class T>
void scramble_inactive(NdArray<T>& a, const ActiveMask& mask, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 50);
  const std::size_t plane = mask.values().size();
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!mask.flat_active(k % plane)) a[k] = static_cast<T>(a[k] + n(rng));
}

Outcome mask_invariance() {
  using namespace vaednn::nn;
  Outcome o;
  o.pass = true;
  World& w = world();
  const ActiveMask& mask = w.mask;
  std::mt19937_64 rng(61);
  RowVector<double> plane_mask(kPlane);
  for (std::size_t k = 0; k < kPlane; ++k) plane_mask(static_cast<Eigen::Index>(k)) = mask.flat_active(k) ? 1.0 : 0.0;
  auto same = [&](const std::string& what, double a, double b) {
    const double d = std::abs(a - b);
    o.pass &= o.check(d <= 1e-12 * std::max(1.0, std::abs(a)), what + ": |change| = " + fmt(d));
  };

  const Md x = random_matrix(3, kPlane, rng), r = random_matrix(3, kPlane, rng);
  Md x2 = x, r2 = r;
  scramble_inactive(x2, mask, rng);
  scramble_inactive(r2, mask, rng);
  const Md mu = random_matrix(3, 3, rng), lv = random_matrix(3, 3, rng);
  same("ELBO", elbo_loss(x, r, mu, lv, plane_mask, 0.1).total, elbo_loss(x2, r2, mu, lv, plane_mask, 0.1).total);
  Dft2<double> dft(kN1, kN2);
  same("FFL", focal_frequency_loss(r, x, 1, plane_mask, dft, 1.0, 1e3).loss,
       focal_frequency_loss(r2, x2, 1, plane_mask, dft, 1.0, 1e3).loss);
  same("masked MSE", masked_mse<double>(r, x, plane_mask, nullptr), masked_mse<double>(r2, x2, plane_mask, nullptr));

  for (auto variant : {VaeVariant::y, VaeVariant::h}) {
    VaeConfig c = toy_vae(variant);
    c.ffl_enabled = true;
    Vae<double> m(c, mask.values());
    m.initialize(7);
    Md in = random_matrix(2, m.features(), rng), eps = random_matrix(2, c.latent_dim, rng);
    const double a = vae_objective(m, in, eps, false).total;
    scramble_inactive(in, mask, rng);
    same(std::string(variant == VaeVariant::y ? "y" : "h") + "-VAE training loss (ELBO + FFL)", a,
         vae_objective(m, in, eps, false).total);
  }
  {
    Md y = random_matrix(3, kPlane, rng), h = random_matrix(3, kNt * kPlane, rng);
    const double a = fno_objective(w.fno, y, h, false);
    scramble_inactive(y, mask, rng);
    scramble_inactive(h, mask, rng);
    same("FNO training loss", a, fno_objective(w.fno, y, h, false));
  }
  {
    NdArray<float> ys({2, kN1, kN2}), hs({2, kNt, kN1, kN2});
    for (std::size_t s = 0; s < 2; ++s) {
      const Field2D y = random_y(70 + s, mask);
      const StateField h = random_h(80 + s, mask);
      for (std::size_t k = 0; k < kPlane; ++k) ys[s * kPlane + k] = static_cast<float>(y[k]);
      for (std::size_t k = 0; k < kNt * kPlane; ++k) hs[s * kNt * kPlane + k] = static_cast<float>(h[k]);
    }
    const Md coords = deeponet_coordinates(mask, kNt).cast<double>();
    auto loss = [&](const NdArray<float>& yy, const NdArray<float>& hh) {
      const Md xi = kle_features(w.kle, yy, toy_deeponet().n_xi).cast<double>();
      const Md t = deeponet_targets(hh, mask).cast<double>();
      return deeponet_objective(w.don, xi, coords, t, false);
    };
    const double a = loss(ys, hs);
    scramble_inactive(ys, mask, rng);
    scramble_inactive(hs, mask, rng);
    same("DeepONet training loss", a, loss(ys, hs));
  }
  {
    const StateField ref = random_h(90, mask), pred = random_h(91, mask);
    StateField ref2 = ref, pred2 = pred;
    scramble_inactive(ref2, mask, rng);
    scramble_inactive(pred2, mask, rng);
    same("rl2_h", relative_l2(pred, ref, mask), relative_l2(pred2, ref2, mask));
    const Field2D yr = random_y(92, mask), yp = random_y(93, mask);
    Field2D yr2 = yr, yp2 = yp;
    scramble_inactive(yr2, mask, rng);
    scramble_inactive(yp2, mask, rng);
    same("rl2_y", relative_l2(yp, yr, mask), relative_l2(yp2, yr2, mask));
  }
  return o;
}

// ------------------------------------------------------------------ 7-9: the desk-scale run

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Stage {
  std::string tag;
  std::string args;  ///< CLI arguments after the subcommand-independent options
  fs::path out;
};

class Experiment {
 public:
  Experiment(fs::path workdir, fs::path cli, bool reuse) : dir_(std::move(workdir)), cli_(std::move(cli)), reuse_(reuse) {
    ws_ = Workspace{dir_ / "ws"};
    fs::create_directories(dir_ / "logs");
    config_ = dir_ / "config.json";
    std::ofstream(config_) << json(PipelineConfig{}).dump(2) << "\n";
    const std::string common = " --config " + shell_quote(config_.string()) + " --workspace " + shell_quote(ws_.root.string());
    stages_ = {{"generate-data", "generate-data" + common, ws_.data()},
               {"train-yvae", "train-yvae" + common, ws_.yvae()},
               {"train-hvae", "train-hvae" + common, ws_.hvae()},
               {"train-map", "train-map" + common, ws_.map()},
               {"train-fno", "train-fno" + common, ws_.fno()},
               {"train-deeponet", "train-deeponet" + common, ws_.deeponet()},
               {"compare", "compare" + common, ws_.compare()}};
    for (auto m : kMethods) {
      stages_.push_back({std::string("sweep-") + to_string(m), "sweep --method " + std::string(to_string(m)) + common,
                         ws_.sweep(m)});
    }
    stages_.push_back({"report", "report" + common, ws_.report()});
  }

  const Workspace& workspace() const { return ws_; }
  const fs::path& cli() const { return cli_; }
  const fs::path& dir() const { return dir_; }

  /// Runs the CLI; stdout and stderr go to logs/<tag>.{out,err}.
  int run_cli(const std::string& args, const std::string& tag) const {
    const fs::path log = dir_ / "logs" / tag;
    const std::string cmd = shell_quote(cli_.string()) + " " + args + " > " + shell_quote(log.string() + ".out") +
                            " 2> " + shell_quote(log.string() + ".err");
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
  }
  std::string stderr_of(const std::string& tag) const { return slurp(dir_ / "logs" / (tag + ".err")); }
  std::string stdout_of(const std::string& tag) const { return slurp(dir_ / "logs" / (tag + ".out")); }

  /// Runs stages in order up to and including `last`. Returns false and
  /// names the failed stage on error.
  bool ensure(const std::string& last, std::string* failed) {
    if (!failed_.empty()) {
      *failed = failed_;
      return false;
    }
    for (const auto& s : stages_) {
      if (!done_.count(s.tag)) {
        if (reuse_ && fs::exists(s.out / kRunManifestName)) {
          std::cout << "  [stage] " << s.tag << " reused" << std::endl;
        } else {
          std::cout << "  [stage] " << s.tag << " ..." << std::flush;
          const auto t0 = std::chrono::steady_clock::now();
          const int rc = run_cli(s.args, s.tag);
          std::cout << " exit " << rc << ", " << fmt(seconds_since(t0), 4) << " s" << std::endl;
          if (rc != 0) {
            failed_ = *failed = s.tag + ": " + stderr_of(s.tag);
            return false;
          }
        }
        done_.insert(s.tag);
      }
      if (s.tag == last) return true;
    }
    return true;
  }

 private:
  fs::path dir_, cli_, config_;
  Workspace ws_;
  bool reuse_;
  std::vector<Stage> stages_;
  std::set<std::string> done_;
  std::string failed_;
};

Outcome stage_failure(const std::string& what) {
  Outcome o;
  o.check(false, "experiment stage failed: " + what);
  return o;
}

Outcome forward_benchmark(Experiment& ex) {
  std::string failed;
  if (!ex.ensure("compare", &failed)) return stage_failure(failed);
  Outcome o;
  const Workspace& ws = ex.workspace();
  const RunManifest cmp = read_run_manifest(ws.compare());
  std::map<std::string, double> rl2;
  for (const auto& r : cmp.results.at("rows")) {
    rl2[r.at("model").get<std::string>()] = r.at("rl2_h").get<double>();
    o.note(r.at("model").get<std::string>() + ": held-out rl2_h " + fmt(r.at("rl2_h").get<double>()) + ", train rl2_h " +
           fmt(r.at("rl2_h_train").get<double>()) + ", " + std::to_string(r.at("parameters").get<std::size_t>()) +
           " parameters, " + std::to_string(r.at("epochs").get<int>()) + " epochs");
  }
  const double dnn = rl2.at("VAE-DNN"), don = rl2.at("DeepONet"), fno = rl2.at("FNO");
  o.pass = o.check(dnn <= don, "(a) VAE-DNN rl2_h " + fmt(dnn) + " <= DeepONet " + fmt(don));
  const double ratio = std::max(dnn, fno) / std::min(dnn, fno);
  o.pass &= o.check(ratio < 10.0, "(b) VAE-DNN vs FNO rl2_h ratio " + fmt(ratio) + " < 10");

  auto wall = [&](const fs::path& p) { return read_run_manifest(p).wall_seconds; };
  const double t_y = wall(ws.yvae()), t_h = wall(ws.hvae()), t_m = wall(ws.map());
  const double t_dnn = t_y + t_h + t_m, t_fno = wall(ws.fno()), t_don = wall(ws.deeponet());
  o.note("training wall time: y-VAE " + fmt(t_y) + " s, h-VAE " + fmt(t_h) + " s, map " + fmt(t_m) + " s, DeepONet " +
         fmt(t_don) + " s");
  o.pass &= o.check(t_dnn < t_fno, "(c) VAE-DNN training " + fmt(t_dnn) + " s < FNO " + fmt(t_fno) + " s");
  const double budget = t_dnn + t_fno + t_don + wall(ws.compare());
  o.note("data generation " + fmt(wall(ws.data())) + " s (not part of the training budget)");
  o.pass &= o.check(budget <= 7200.0, "training and evaluation " + fmt(budget) + " s <= 2 h");
  return o;
}

Outcome inverse_benchmark(Experiment& ex) {
  std::string failed;
  if (!ex.ensure("report", &failed)) return stage_failure(failed);
  Outcome o;
  o.pass = true;
  std::map<InverseMethod, std::vector<SweepRow>> sw;
  for (auto m : kMethods) {
    sw[m] = load_sweep(ex.workspace().sweep(m));
    std::string curve;
    for (const auto& r : sw[m]) curve += " " + fmt(r.gamma, 2) + ":" + (r.ok && r.result.rl2_y ? fmt(*r.result.rl2_y) : "failed");
    o.note(std::string(to_string(m)) + " rl2_y by gamma:" + curve);
  }
  struct Shape {
    bool complete = true;
    std::size_t argmin = 0;
    double lo = 0, hi = 0;
  };
  auto shape = [&](InverseMethod m) {
    Shape s;
    const auto& rows = sw.at(m);
    s.complete = rows.size() == 6;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (!rows[k].ok || !rows[k].result.rl2_y) {
        s.complete = false;
        continue;
      }
      const double e = *rows[k].result.rl2_y;
      if (k == 0 || e < s.lo) {
        s.lo = e;
        s.argmin = k;
      }
      s.hi = std::max(s.hi, e);
    }
    return s;
  };
  const Shape dnn = shape(InverseMethod::vaednn), fno = shape(InverseMethod::fno), don = shape(InverseMethod::deeponet);
  o.pass &= o.check(dnn.complete && fno.complete && don.complete, "all 18 inversions finished");
  auto interior = [](const Shape& s) { return s.argmin > 0 && s.argmin < 5; };
  o.pass &= o.check(interior(dnn), "(a) VAE-DNN minimum at gamma index " + std::to_string(dnn.argmin) + " is interior");
  o.pass &= o.check(interior(don), "(a) DeepONet minimum at gamma index " + std::to_string(don.argmin) + " is interior");
  o.pass &= o.check(fno.lo > dnn.lo, "(b) FNO best rl2_y " + fmt(fno.lo) + " > VAE-DNN best " + fmt(dnn.lo));
  const double r_dnn = dnn.hi / dnn.lo, r_fno = fno.hi / fno.lo, r_don = don.hi / don.lo;
  o.pass &= o.check(r_fno < r_dnn && r_fno < r_don, "(c) max/min ratios: FNO " + fmt(r_fno) + ", VAE-DNN " + fmt(r_dnn) +
                                                        ", DeepONet " + fmt(r_don));
  return o;
}

Outcome trainable_by_parts(Experiment& ex) {
  std::string failed;
  if (!ex.ensure("train-map", &failed)) return stage_failure(failed);
  Outcome o;
  const Workspace& ws = ex.workspace();
  o.note("y-VAE, h-VAE and latent map were trained by three separate CLI processes");
  const json split = json::parse(slurp(ws.data() / "split.json"));
  const std::size_t sample = split.at("test").at(0).get<std::size_t>();
  const std::string base = " --data " + shell_quote(ws.data().string());

  const fs::path pred_out = ex.dir() / "by-parts" / "predict";
  fs::remove_all(pred_out);
  int rc = ex.run_cli("predict --method vaednn --sample " + std::to_string(sample) + " --bundle " +
                          shell_quote(ws.bundle().string()) + base + " --out " + shell_quote(pred_out.string()),
                      "by-parts-predict");
  double rl2 = NAN;
  if (rc == 0) rl2 = json::parse(ex.stdout_of("by-parts-predict")).at("results").at("rl2_h").get<double>();
  o.pass = o.check(rc == 0 && std::isfinite(rl2), "predict from loaded artifacts: exit " + std::to_string(rc) +
                                                      ", rl2_h " + fmt(rl2));

  const std::vector<std::pair<std::string, std::string>> parts = {{"yvae", "y-VAE"}, {"hvae", "h-VAE"}, {"map", "latent map"}};
  for (const auto& [dir, name] : parts) {
    const fs::path copy = ex.dir() / "by-parts" / ("without-" + dir);
    fs::remove_all(copy);
    fs::create_directories(copy);
    for (const char* d : {"yvae", "hvae", "map"}) fs::copy(ws.root / d, copy / d, fs::copy_options::recursive);
    fs::create_directories(copy / "data");
    fs::copy(ws.data() / "stats", copy / "data" / "stats", fs::copy_options::recursive);
    for (const auto& e : fs::directory_iterator(copy / dir))
      if (e.path().filename() != "bundle.json") fs::remove_all(e.path());
    const std::string tag = "by-parts-without-" + dir;
    rc = ex.run_cli("predict --method vaednn --sample " + std::to_string(sample) + " --bundle " +
                        shell_quote((copy / "map" / "bundle.json").string()) + base + " --out " +
                        shell_quote((copy / "predict").string()),
                    tag);
    std::string kind, message;
    try {
      const json err = json::parse(ex.stderr_of(tag));
      kind = err.at("error").get<std::string>();
      message = err.at("message").get<std::string>();
    } catch (const std::exception&) {
    }
    o.pass &= o.check(rc != 0 && kind == "missing-checkpoint" && message.find(name) != std::string::npos,
                      "without the " + name + " checkpoint: exit " + std::to_string(rc) + ", " + kind + " \"" + message + "\"");
    fs::remove_all(copy);
  }
  return o;
}

// ------------------------------------------------------------------ 10

struct LayerSpec {
  const char* layer;
  const char* filters;
  nn::Shape3 in, out;
  const char* act;
};

bool same_rows(const std::vector<LayerRow>& got, const std::vector<LayerSpec>& want, std::string* diff) {
  if (got.size() != want.size()) {
    *diff = std::to_string(got.size()) + " layers, expected " + std::to_string(want.size());
    return false;
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto& g = got[i];
    const auto& w = want[i];
    if (g.layer != w.layer || g.filters != w.filters || g.input != w.in || g.output != w.out || g.activation != w.act) {
      *diff = "row " + std::to_string(i) + " (" + g.layer + ")";
      return false;
    }
  }
  return true;
}

Outcome architecture() {
  Outcome o;
  const std::vector<unsigned char> cells = build_freyberg_domain().mask.values();
  Vae<float> yv(VaeConfig::y_default(), cells), hv(VaeConfig::h_default(), cells);
  const int ly = 150, lh = 90;
  const std::vector<LayerSpec> y_rows = {
      {"Conv2D", "8", {1, 40, 20}, {8, 40, 20}, "Tanh"},
      {"AvgPool2D", "...", {8, 40, 20}, {8, 20, 10}, "..."},
      {"Conv2D", "16", {8, 20, 10}, {16, 20, 10}, "Tanh"},
      {"AvgPool2D", "...", {16, 20, 10}, {16, 10, 5}, "..."},
      {"Conv2D", "32", {16, 10, 5}, {32, 10, 5}, "Tanh"},
      {"Reshape", "...", {32, 10, 5}, {1600, 1, 1}, "..."},
      {"Dense (mean)", "...", {1600, 1, 1}, {ly, 1, 1}, "Linear"},
      {"Dense (log var)", "...", {1600, 1, 1}, {ly, 1, 1}, "Linear"},
      {"Dense", "...", {ly, 1, 1}, {1600, 1, 1}, "Linear"},
      {"Reshape", "...", {1600, 1, 1}, {32, 10, 5}, "..."},
      {"ConvTranspose2D", "16", {32, 10, 5}, {16, 10, 5}, "Tanh"},
      {"ConvTranspose2D", "8", {16, 10, 5}, {8, 20, 10}, "Tanh"},
      {"ConvTranspose2D", "1", {8, 20, 10}, {1, 40, 20}, "Linear"},
  };
  const std::vector<LayerSpec> h_rows = {
      {"Conv2D", "24", {24, 40, 20}, {24, 40, 20}, "Tanh"},
      {"MaxPool2D", "...", {24, 40, 20}, {24, 20, 10}, "..."},
      {"Conv2D", "48", {24, 20, 10}, {48, 20, 10}, "Tanh"},
      {"MaxPool2D", "...", {48, 20, 10}, {48, 10, 5}, "..."},
      {"Conv2D", "96", {48, 10, 5}, {96, 10, 5}, "Tanh"},
      {"Reshape", "...", {96, 10, 5}, {4800, 1, 1}, "..."},
      {"Dense (mean)", "...", {4800, 1, 1}, {lh, 1, 1}, "Linear"},
      {"Dense (log var)", "...", {4800, 1, 1}, {lh, 1, 1}, "Linear"},
      {"Dense", "...", {lh, 1, 1}, {4800, 1, 1}, "Linear"},
      {"Reshape", "...", {4800, 1, 1}, {96, 10, 5}, "..."},
      {"ConvTranspose2D", "48", {96, 10, 5}, {48, 20, 10}, "Tanh"},
      {"ConvTranspose2D", "24", {48, 20, 10}, {24, 40, 20}, "Tanh"},
      {"Conv2D", "24", {24, 40, 20}, {24, 40, 20}, "Linear"},
  };
  std::string diff;
  o.pass = o.check(same_rows(yv.architecture(), y_rows, &diff), "y-VAE layer table " + (diff.empty() ? "matches" : diff));
  diff.clear();
  o.pass &= o.check(same_rows(hv.architecture(), h_rows, &diff), "h-VAE layer table " + (diff.empty() ? "matches" : diff));
  o.pass &= o.check(yv.config().latent_dim == 150 && hv.config().latent_dim == 90,
                    "latent dims " + std::to_string(yv.config().latent_dim) + "/" + std::to_string(hv.config().latent_dim));
  const FnoConfig fc;
  o.pass &= o.check(fc.n_layers == 4 && fc.width == 128 && fc.modes1 == 8 && fc.modes2 == 8,
                    "FNO " + std::to_string(fc.n_layers) + " layers, width " + std::to_string(fc.width) + ", modes " +
                        std::to_string(fc.modes1) + "x" + std::to_string(fc.modes2));
  const DeepONetConfig dc;
  const bool branch = dc.branch_hidden == std::vector<int>(4, 1200), trunk = dc.trunk_hidden == std::vector<int>(4, 300);
  o.pass &= o.check(branch && trunk && dc.p == 90, "DeepONet branch 4x1200, trunk 4x300, p = " + std::to_string(dc.p));

  LatentMap<float> map{MapConfig{}};
  Fno<float> fno(fc, cells);
  DeepONet<float> don(dc);
  const std::size_t ny = yv.parameter_count(), nh = hv.parameter_count(), nm = map.parameter_count();
  const std::vector<std::tuple<std::string, std::size_t, double>> counts = {
      {"y-VAE", ny, 733805},          {"h-VAE", nh, 3488000},           {"DNN map", nm, 626600},
      {"VAE-DNN total", ny + nh + nm, 4848405}, {"DeepONet", don.parameter_count(), 4912080},
      {"FNO", fno.parameter_count(), 4767864}};
  for (const auto& [name, got, want] : counts) {
    const double rel = std::abs(static_cast<double>(got) - want) / want;
    o.pass &= o.check(rel <= 0.05, name + " parameters " + std::to_string(got) + " vs " + fmt(want, 8) + " (" +
                                       fmt(100 * rel, 3) + "% off)");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string workdir = VAEDNN_ACCEPTANCE_WORKDIR, cli = VAEDNN_CLI_PATH;
  bool reuse = false;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--workdir", workdir, "work directory of the desk-scale experiment");
  app.add_option("--cli", cli, "path of the vaednn tool");
  app.add_flag("--reuse", reuse, "skip experiment stages that already have a run manifest");
  CLI11_PARSE(app, argc, argv);

  Experiment ex(workdir, cli, reuse);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"solver oracle (steady Dupuit strip)", solver_oracle},
      {"mass conservation (transient Freyberg)", conservation},
      {"KLE spectrum, identity and truncation", kle},
      {"loss and objective gradients", gradients},
      {"focal frequency loss oracle", ffl_oracle},
      {"mask invariance", mask_invariance},
      {"desk-scale forward benchmark", [&] { return forward_benchmark(ex); }},
      {"inverse benchmark (gamma sweep)", [&] { return inverse_benchmark(ex); }},
      {"trainable by parts", [&] { return trainable_by_parts(ex); }},
      {"architecture conformance", architecture},
  };

  json summary = json::array();
  int failures = 0;
  std::vector<std::string> verdicts;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto& [name, fn] = criteria[i];
    std::cout << "criterion " << id << ": " << name << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    for (const auto& l : o.lines) std::cout << "    " << l << std::endl;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << name << "  (" << fmt(secs, 3)
         << " s)";
    std::cout << line.str() << "\n" << std::endl;
    verdicts.push_back(line.str());
    failures += !o.pass;
    summary.push_back({{"criterion", id}, {"name", name}, {"pass", o.pass}, {"seconds", secs}, {"details", o.lines}});
  }
  std::cout << "summary" << std::endl;
  for (const auto& v : verdicts) std::cout << "  " << v << std::endl;
  std::ofstream(fs::path(workdir) / "acceptance.json") << summary.dump(2) << "\n";
  return failures == 0 ? 0 : 1;
}
