#include "vaednn/gw_solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace vaednn {

void to_json(nlohmann::json& j, const SolverConfig& c) {
  j = {{"picard_tol", c.picard_tol},
       {"picard_max_iter", c.picard_max_iter},
       {"dt_initial_steady", c.dt_initial_steady},
       {"upstream_weighting", c.upstream_weighting},
       {"linear_solver_tol", c.linear_solver_tol},
       {"steady_damping", c.steady_damping},
       {"transient_damping", c.transient_damping},
       {"substeps_per_period", c.substeps_per_period},
       {"max_step_cuts", c.max_step_cuts},
       {"well_throttle_thickness", c.well_throttle_thickness},
       {"min_thickness", c.min_thickness}};
}

void from_json(const nlohmann::json& j, SolverConfig& c) {
  c = SolverConfig{};
  c.picard_tol = j.value("picard_tol", c.picard_tol);
  c.picard_max_iter = j.value("picard_max_iter", c.picard_max_iter);
  c.dt_initial_steady = j.value("dt_initial_steady", c.dt_initial_steady);
  c.upstream_weighting = j.value("upstream_weighting", c.upstream_weighting);
  c.linear_solver_tol = j.value("linear_solver_tol", c.linear_solver_tol);
  c.steady_damping = j.value("steady_damping", c.steady_damping);
  c.transient_damping = j.value("transient_damping", c.transient_damping);
  c.substeps_per_period = j.value("substeps_per_period", c.substeps_per_period);
  c.max_step_cuts = j.value("max_step_cuts", c.max_step_cuts);
  c.well_throttle_thickness = j.value("well_throttle_thickness", c.well_throttle_thickness);
  c.min_thickness = j.value("min_thickness", c.min_thickness);
}

std::vector<std::string> validate_solver_config(const SolverConfig& c) {
  std::vector<std::string> v;
  if (!(c.picard_tol > 0)) v.push_back("solver: picard_tol must be > 0");
  if (c.picard_max_iter < 1) v.push_back("solver: picard_max_iter must be >= 1");
  if (!(c.linear_solver_tol > 0)) v.push_back("solver: linear_solver_tol must be > 0");
  if (c.dt_initial_steady < 0) v.push_back("solver: dt_initial_steady must be >= 0");
  if (!(c.steady_damping > 0 && c.steady_damping <= 1)) v.push_back("solver: steady_damping must lie in (0, 1]");
  if (!(c.transient_damping > 0 && c.transient_damping <= 1)) v.push_back("solver: transient_damping must lie in (0, 1]");
  if (c.substeps_per_period < 1) v.push_back("solver: substeps_per_period must be >= 1");
  if (c.max_step_cuts < 0 || c.max_step_cuts > 20) v.push_back("solver: max_step_cuts must lie in [0, 20]");
  if (!(c.well_throttle_thickness > 0)) v.push_back("solver: well_throttle_thickness must be > 0");
  if (!(c.min_thickness > 0)) v.push_back("solver: min_thickness must be > 0");
  return v;
}

double intercell_conductance(double k_a, double k_b, double h_a, double h_b, const FaceGeometry& g, bool upstream) {
  if (!(k_a > 0.0) || !(k_b > 0.0)) throw Error(ErrorKind::invalid_config, "conductivity must be positive");
  const double k = 2.0 * k_a * k_b / (k_a + k_b);
  const double thickness = upstream ? std::max(h_a, h_b) : 0.5 * (h_a + h_b);
  if (!(thickness > 0.0)) return 0.0;
  return k * thickness * g.width / g.distance;
}

double PeriodBudget::residual() const noexcept { return std::abs(inflow() - outflow() - storage_change); }

PeriodBudget& PeriodBudget::operator+=(const PeriodBudget& o) noexcept {
  recharge_in += o.recharge_in;
  wells_in += o.wells_in;
  wells_out += o.wells_out;
  river_in += o.river_in;
  river_out += o.river_out;
  robin_in += o.robin_in;
  robin_out += o.robin_out;
  storage_change += o.storage_change;
  return *this;
}

namespace {

struct Face {
  int a, b;       // positions in the active vector
  double kwd;     // harmonic K * w / d
};

/// Stresses held constant over one time step.
struct StepStress {
  double recharge = 0.0;
  std::vector<double> well_rates;
  std::vector<double> river_stage;  // per river cell, absolute
};

class FlowModel {
 public:
  FlowModel(const Domain& domain, const Field2D& conductivity, const SolverConfig& cfg)
      : domain_(domain), cfg_(cfg) {
    if (auto v = validate_solver_config(cfg); !v.empty()) throw Error(ErrorKind::invalid_config, v.front());
    const auto& grid = domain.grid;
    if (conductivity.size() != static_cast<std::size_t>(grid.cell_count())) {
      throw Error(ErrorKind::shape_mismatch, "conductivity field does not match the grid");
    }
    const auto& cells = domain.mask.active_cells();
    const auto& pos = domain.mask.active_position();
    n_ = static_cast<int>(cells.size());
    area_ = grid.d_x1 * grid.d_x2;
    k_.resize(static_cast<std::size_t>(n_));
    for (int a = 0; a < n_; ++a) {
      const double k = conductivity[static_cast<std::size_t>(cells[static_cast<std::size_t>(a)])];
      if (!(k > 0.0) || !std::isfinite(k)) throw Error(ErrorKind::invalid_config, "conductivity must be positive on active cells");
      k_[static_cast<std::size_t>(a)] = k;
    }
    for (int a = 0; a < n_; ++a) {
      const int flat = cells[static_cast<std::size_t>(a)];
      const int i = flat / grid.n_x2, j = flat % grid.n_x2;
      if (i + 1 < grid.n_x1 && domain.mask(i + 1, j)) {
        add_face(a, pos[static_cast<std::size_t>(grid.flat(i + 1, j))], grid.d_x2, grid.d_x1);
      }
      if (j + 1 < grid.n_x2 && domain.mask(i, j + 1)) {
        add_face(a, pos[static_cast<std::size_t>(grid.flat(i, j + 1))], grid.d_x1, grid.d_x2);
      }
    }
    auto positions = [&](const std::vector<CellIndex>& cs) {
      std::vector<int> out;
      for (const auto& c : cs) {
        if (!domain.mask.contains(c)) throw Error(ErrorKind::stress_cell_outside_mask, "stress cell outside the active mask");
        out.push_back(pos[static_cast<std::size_t>(grid.flat(c.i, c.j))]);
      }
      return out;
    };
    wells_ = positions(domain.schedule.well_cells);
    rivers_ = positions(domain.schedule.river_cells);
    robins_ = positions(domain.schedule.robin_cells);
  }

  int size() const noexcept { return n_; }

  StepStress stress(std::size_t period) const {
    const auto& p = domain_.schedule.periods.at(period);
    StepStress s;
    s.recharge = p.recharge_rate;
    s.well_rates = p.well_rates;
    if (s.well_rates.size() != wells_.size()) throw Error(ErrorKind::length_mismatch, "well_rates length differs from well count");
    s.river_stage.resize(rivers_.size());
    for (std::size_t r = 0; r < rivers_.size(); ++r) {
      const double off = r < domain_.schedule.river_stage_offsets.size() ? domain_.schedule.river_stage_offsets[r] : 0.0;
      s.river_stage[r] = p.river_stage + off;
    }
    return s;
  }

  /// Solves one (pseudo-)time step by Picard iteration. dt <= 0 means steady.
  /// On return `h` holds the solution and `budget` the step volumes.
  Eigen::VectorXd step(const Eigen::VectorXd& h_old, const Eigen::VectorXd& guess, double dt, const StepStress& s,
                       double damping, double pseudo_dt, SolveDiagnostics& diag, PeriodBudget& budget) {
    Eigen::VectorXd h_lin = guess;
    for (int it = 1; it <= cfg_.picard_max_iter; ++it) {
      assemble(h_lin, h_old, dt, pseudo_dt, s);
      if (!analyzed_) {
        solver_.analyzePattern(a_);
        analyzed_ = true;
      }
      solver_.factorize(a_);
      if (solver_.info() != Eigen::Success) throw Error(ErrorKind::solver_failure, "factorization failed");
      Eigen::VectorXd h_new = solver_.solve(b_);
      const double bnorm = std::max(b_.norm(), 1e-300);
      const double rel = (a_ * h_new - b_).norm() / bnorm;
      if (!(rel <= cfg_.linear_solver_tol) || !h_new.allFinite()) {
        std::ostringstream os;
        os << "linear residual " << rel << " exceeds " << cfg_.linear_solver_tol;
        throw Error(ErrorKind::solver_failure, os.str());
      }
      const double change = (h_new - h_lin).cwiseAbs().maxCoeff();
      diag.iterations = it;
      diag.final_change = change;
      diag.linear_residual = rel;
      if (change < cfg_.picard_tol) {
        accumulate_budget(h_lin, h_old, h_new, dt, s, budget);
        diag.dry_cells = static_cast<int>((h_new.array() <= 0.0).count());
        return h_new;
      }
      h_lin += damping * (h_new - h_lin);
    }
    std::ostringstream os;
    os << "Picard did not converge after " << diag.iterations << " iterations (last change " << diag.final_change
       << " m)";
    throw Error(ErrorKind::no_convergence, os.str());
  }

  Eigen::VectorXd gather(const HeadField& h) const {
    Eigen::VectorXd v(n_);
    const auto& cells = domain_.mask.active_cells();
    for (int a = 0; a < n_; ++a) v[a] = h[static_cast<std::size_t>(cells[static_cast<std::size_t>(a)])];
    return v;
  }

  void scatter(const Eigen::VectorXd& v, std::span<double> out) const {
    std::fill(out.begin(), out.end(), kInactiveSentinel);
    const auto& cells = domain_.mask.active_cells();
    for (int a = 0; a < n_; ++a) out[static_cast<std::size_t>(cells[static_cast<std::size_t>(a)])] = v[a];
  }

 private:
  void add_face(int a, int b, double width, double distance) {
    const double ka = k_[static_cast<std::size_t>(a)], kb = k_[static_cast<std::size_t>(b)];
    faces_.push_back({a, b, 2.0 * ka * kb / (ka + kb) * width / distance});
  }

  double thickness(double ha, double hb) const {
    const double t = cfg_.upstream_weighting ? std::max(ha, hb) : 0.5 * (ha + hb);
    return std::max(t, cfg_.min_thickness);
  }

  double throttle(double rate, double h) const {
    if (rate >= 0.0) return 1.0;
    return std::clamp(h / cfg_.well_throttle_thickness, 0.0, 1.0);
  }

  void assemble(const Eigen::VectorXd& h_lin, const Eigen::VectorXd& h_old, double dt, double pseudo_dt,
                const StepStress& s) {
    triplets_.clear();
    b_.setZero(n_);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_);
    for (const auto& f : faces_) {
      const double c = f.kwd * thickness(h_lin[f.a], h_lin[f.b]);
      diag[f.a] += c;
      diag[f.b] += c;
      triplets_.emplace_back(f.a, f.b, -c);
      triplets_.emplace_back(f.b, f.a, -c);
    }
    const double sy_area = domain_.specific_yield * area_;
    if (dt > 0.0) {
      diag.array() += sy_area / dt;
      b_ += (sy_area / dt) * h_old;
    }
    if (pseudo_dt > 0.0) {
      diag.array() += sy_area / pseudo_dt;
      b_ += (sy_area / pseudo_dt) * h_lin;
    }
    b_.array() += s.recharge * area_;
    for (std::size_t w = 0; w < wells_.size(); ++w) {
      const int a = wells_[w];
      b_[a] += s.well_rates[w] * throttle(s.well_rates[w], h_lin[a]);
    }
    auto head_dependent = [&](int a, double conductance, double stage) {
      if (h_lin[a] > 0.0) {
        diag[a] += conductance;
        b_[a] += conductance * stage;
      } else {
        b_[a] += conductance * stage;  // dry: exchange against the aquifer bottom
      }
    };
    for (std::size_t r = 0; r < rivers_.size(); ++r) {
      head_dependent(rivers_[r], domain_.schedule.river_bed_conductance, s.river_stage[r]);
    }
    for (int a : robins_) head_dependent(a, domain_.schedule.robin_conductance, domain_.schedule.robin_external_head);
    for (int a = 0; a < n_; ++a) triplets_.emplace_back(a, a, diag[a]);
    a_.resize(n_, n_);
    a_.setFromTriplets(triplets_.begin(), triplets_.end());
  }

  void accumulate_budget(const Eigen::VectorXd& h_lin, const Eigen::VectorXd& h_old, const Eigen::VectorXd& h_new,
                         double dt, const StepStress& s, PeriodBudget& b) const {
    // Steady steps report volumes over a unit-free "duration" supplied by the caller via dt < 0.
    const double span = std::abs(dt);
    b.recharge_in += s.recharge * area_ * n_ * span;
    for (std::size_t w = 0; w < wells_.size(); ++w) {
      const double q = s.well_rates[w] * throttle(s.well_rates[w], h_lin[wells_[w]]) * span;
      (q >= 0 ? b.wells_in : b.wells_out) += std::abs(q);
    }
    auto exchange = [&](int a, double conductance, double stage, double& in, double& out) {
      const double q = conductance * (stage - (h_lin[a] > 0.0 ? h_new[a] : 0.0)) * span;
      (q >= 0 ? in : out) += std::abs(q);
    };
    for (std::size_t r = 0; r < rivers_.size(); ++r) {
      exchange(rivers_[r], domain_.schedule.river_bed_conductance, s.river_stage[r], b.river_in, b.river_out);
    }
    for (int a : robins_) {
      exchange(a, domain_.schedule.robin_conductance, domain_.schedule.robin_external_head, b.robin_in, b.robin_out);
    }
    if (dt > 0.0) b.storage_change += domain_.specific_yield * area_ * (h_new - h_old).sum();
  }

  const Domain& domain_;
  SolverConfig cfg_;
  int n_ = 0;
  double area_ = 0.0;
  std::vector<double> k_;
  std::vector<Face> faces_;
  std::vector<int> wells_, rivers_, robins_;
  std::vector<Eigen::Triplet<double>> triplets_;
  Eigen::SparseMatrix<double> a_;
  Eigen::VectorXd b_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  bool analyzed_ = false;
};

Shape grid_shape(const Domain& d) {
  return {static_cast<std::size_t>(d.grid.n_x1), static_cast<std::size_t>(d.grid.n_x2)};
}

}  // namespace

HeadField solve_steady(const Domain& domain, const Field2D& conductivity, double recharge0, const SolverConfig& cfg,
                       SolveDiagnostics* diagnostics, PeriodBudget* budget) {
  FlowModel model(domain, conductivity, cfg);
  if (domain.schedule.periods.empty()) throw Error(ErrorKind::invalid_config, "schedule has no periods");
  StepStress s = model.stress(0);
  s.recharge = recharge0;

  const double guess_head = std::max(domain.schedule.robin_external_head + 2.0, 1.0);
  const Eigen::VectorXd guess = Eigen::VectorXd::Constant(model.size(), guess_head);
  SolveDiagnostics diag;
  PeriodBudget b;
  // dt < 0 marks a steady step whose budget spans |dt| seconds.
  const double span = -domain.schedule.periods[0].duration;
  const Eigen::VectorXd h = model.step(guess, guess, span, s, cfg.steady_damping, cfg.dt_initial_steady, diag, b);
  if (diagnostics) *diagnostics = diag;
  if (budget) *budget = b;
  HeadField out(grid_shape(domain), kInactiveSentinel);
  model.scatter(h, out.span());
  return out;
}

TransientResult solve_transient(const Domain& domain, const Field2D& conductivity, const HeadField& h0,
                                const SolverConfig& cfg) {
  FlowModel model(domain, conductivity, cfg);
  const auto& periods = domain.schedule.periods;
  if (periods.size() < 2) throw Error(ErrorKind::invalid_config, "transient run needs at least two periods");
  if (h0.size() != static_cast<std::size_t>(domain.grid.cell_count())) {
    throw Error(ErrorKind::shape_mismatch, "initial head does not match the grid");
  }
  TransientResult result;
  result.heads = StateField({periods.size() - 1, static_cast<std::size_t>(domain.grid.n_x1),
                             static_cast<std::size_t>(domain.grid.n_x2)},
                            kInactiveSentinel);
  Eigen::VectorXd h = model.gather(h0);
  for (std::size_t p = 0; p < periods.size(); ++p) {
    const StepStress s = model.stress(p);
    const double dt = periods[p].duration / cfg.substeps_per_period;
    PeriodBudget b;
    // On non-convergence the step is halved (recursively, damped) until
    // max_step_cuts is reached; the budget accumulates over the pieces.
    std::function<void(double, int)> advance = [&](double span, int cuts) {
      SolveDiagnostics diag;
      PeriodBudget piece;
      try {
        h = model.step(h, h, span, s, cuts == 0 ? cfg.transient_damping : cfg.steady_damping, 0.0, diag, piece);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::no_convergence || cuts >= cfg.max_step_cuts) throw;
        advance(0.5 * span, cuts + 1);
        advance(0.5 * span, cuts + 1);
        return;
      }
      b += piece;
      result.picard_iterations.push_back(diag.iterations);
      result.max_dry_cells = std::max(result.max_dry_cells, diag.dry_cells);
      result.step_cuts = std::max(result.step_cuts, cuts);
    };
    for (int k = 0; k < cfg.substeps_per_period; ++k) {
      try {
        advance(dt, 0);
      } catch (const Error& e) {
        throw Error(e.kind(), e.detail() + " at period " + std::to_string(p) + " substep " + std::to_string(k) +
                                  " after " + std::to_string(cfg.max_step_cuts) + " step cuts");
      }
    }
    result.budget.periods.push_back(b);
    if (p > 0) model.scatter(h, result.heads.slice(p - 1));
  }
  return result;
}

Field2D conductivity_from_log(const Domain& domain, const Field2D& y) {
  Field2D k(grid_shape(domain), kInactiveSentinel);
  for (int c : domain.mask.active_cells()) k[static_cast<std::size_t>(c)] = std::exp(y[static_cast<std::size_t>(c)]);
  return k;
}

SimulatedPair simulate_pair(const Domain& domain, const LogConductivitySampler& sampler, std::uint64_t seed,
                            const SolverConfig& cfg) {
  SimulatedPair out;
  out.y = sampler.sample(seed);
  try {
    const Field2D k = conductivity_from_log(domain, out.y);
    const double recharge0 = domain.schedule.periods.at(0).recharge_rate;
    const HeadField h0 = solve_steady(domain, k, recharge0, cfg);
    out.h = solve_transient(domain, k, h0, cfg).heads;
  } catch (const Error& e) {
    throw Error(e.kind(), e.detail() + " (seed " + std::to_string(seed) + ")");
  }
  return out;
}

SimulatedPair simulate_pair(const Domain& domain, const CovarianceModel& cov, std::uint64_t seed,
                            const SolverConfig& cfg) {
  return simulate_pair(domain, LogConductivitySampler(domain, cov), seed, cfg);
}

}  // namespace vaednn
