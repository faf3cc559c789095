/**
 * @file gw_solver.hpp
 * @brief Cell-centred finite-volume solver for depth-averaged unconfined flow
 *        S_y dh/dt = div(K h grad h) + f + g on the active cells of a Domain.
 *
 * The aquifer bottom is at elevation 0, so the head is also the saturated
 * thickness. Face conductances use the harmonic mean of K times the upstream
 * (or central) head. River and Robin cells exchange C (H - h); wells are
 * throttled in drying cells. Each nonlinear step is a Picard iteration over
 * a symmetric positive definite linear system.
 */
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/domain.hpp"
#include "vaednn/geostat.hpp"
#include "vaednn/ndarray.hpp"

namespace vaednn {

struct SolverConfig {
  double picard_tol = 1e-5;           ///< m, max head change per Picard sweep
  int picard_max_iter = 200;
  double dt_initial_steady = 0.0;     ///< s; 0 solves the steady equations directly
  bool upstream_weighting = true;
  double linear_solver_tol = 1e-8;    ///< relative residual accepted from the direct solver
  double steady_damping = 0.7;
  double transient_damping = 1.0;
  int substeps_per_period = 1;        ///< backward-Euler steps per stress period
  int max_step_cuts = 6;              ///< halvings of a non-converging step (damped retries)
  double well_throttle_thickness = 1.0;  ///< m; extraction scales with h / this below it
  double min_thickness = 1e-4;        ///< m; keeps dry-cell rows nonsingular
  bool operator==(const SolverConfig&) const = default;
};

void to_json(nlohmann::json& j, const SolverConfig& c);
void from_json(const nlohmann::json& j, SolverConfig& c);
std::vector<std::string> validate_solver_config(const SolverConfig& c);

struct FaceGeometry {
  double width = 1.0;     ///< m
  double distance = 1.0;  ///< m, center to center
};

/// Harmonic-mean K times saturated thickness times w/d, in m^2/s. The
/// thickness is the upstream head when `upstream`, otherwise the mean of the
/// two heads; a nonpositive thickness gives 0.
double intercell_conductance(double k_a, double k_b, double h_a, double h_b, const FaceGeometry& geometry,
                             bool upstream = true);

/// Volumes in m^3 over one stress period; inflows positive.
struct PeriodBudget {
  double recharge_in = 0.0;
  double wells_in = 0.0;
  double wells_out = 0.0;
  double river_in = 0.0;
  double river_out = 0.0;
  double robin_in = 0.0;
  double robin_out = 0.0;
  double storage_change = 0.0;  ///< increase of stored water

  double inflow() const noexcept { return recharge_in + wells_in + river_in + robin_in; }
  double outflow() const noexcept { return wells_out + river_out + robin_out; }
  double residual() const noexcept;
  PeriodBudget& operator+=(const PeriodBudget& o) noexcept;
};

struct FluxBudget {
  std::vector<PeriodBudget> periods;
};

struct SolveDiagnostics {
  int iterations = 0;
  double final_change = 0.0;
  double linear_residual = 0.0;
  int dry_cells = 0;
};

/// Steady solution under period-0 stresses with the recharge replaced by
/// `recharge0`. Throws no-convergence with the iteration count.
HeadField solve_steady(const Domain& domain, const Field2D& conductivity, double recharge0, const SolverConfig& cfg,
                       SolveDiagnostics* diagnostics = nullptr, PeriodBudget* budget = nullptr);

struct TransientResult {
  StateField heads;    ///< (24, n_x1, n_x2), one snapshot per monthly period
  FluxBudget budget;   ///< one entry per period, including the initial one
  std::vector<int> picard_iterations;  ///< per time step
  int max_dry_cells = 0;
  int step_cuts = 0;  ///< deepest step halving used
};

/// Backward Euler over all periods starting from h0. The first (long)
/// period is integrated but not stored as a snapshot.
TransientResult solve_transient(const Domain& domain, const Field2D& conductivity, const HeadField& h0,
                                const SolverConfig& cfg);

struct SimulatedPair {
  Field2D y;
  StateField h;
};

/// y from the sampler, h from a steady initial state followed by the
/// transient run with K = exp(y).
SimulatedPair simulate_pair(const Domain& domain, const CovarianceModel& cov, std::uint64_t seed,
                            const SolverConfig& cfg);
SimulatedPair simulate_pair(const Domain& domain, const LogConductivitySampler& sampler, std::uint64_t seed,
                            const SolverConfig& cfg);

/// K = exp(y) on active cells, -1 elsewhere.
Field2D conductivity_from_log(const Domain& domain, const Field2D& y);

}  // namespace vaednn
