/**
 * @file dataset.hpp
 * @brief Labeled (y, h) datasets, per-cell normalization statistics and
 *        their on-disk form.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vaednn/domain.hpp"
#include "vaednn/geostat.hpp"
#include "vaednn/gw_solver.hpp"
#include "vaednn/ndarray.hpp"

namespace vaednn {

struct Dataset {
  NdArray<float> y;  ///< (N, n_x1, n_x2)
  NdArray<float> h;  ///< (N, N_t, n_x1, n_x2)
  std::vector<std::uint64_t> seeds;
  std::string domain_fingerprint;

  std::size_t size() const noexcept { return seeds.size(); }
  Field2D y_field(std::size_t i) const;
  StateField h_field(std::size_t i) const;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Sample i uses seed base_seed + i. `threads` <= 0 uses the hardware count;
/// the result does not depend on it.
Dataset generate_dataset(const Domain& domain, const CovarianceModel& cov, const SolverConfig& solver, std::size_t n,
                         std::uint64_t base_seed, int threads = 1, const ProgressFn& progress = {});

/// Deterministic split by seed order.
struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
};
DatasetSplit split_dataset(std::size_t n, double train_fraction = 0.9, double validation_fraction = 0.05);

struct NormStats {
  NdArray<double> y_mean, y_std;  ///< (n_x1, n_x2); inactive entries 0
  NdArray<double> h_mean, h_std;  ///< (N_t, n_x1, n_x2); inactive entries 0
  std::size_t count = 0;
  std::string dataset_fingerprint;  ///< content hash of the source dataset
  bool operator==(const NormStats&) const = default;
};

/// Content hash over the domain fingerprint, seeds and both arrays.
std::string dataset_fingerprint(const Dataset& ds);
/// Content hash of the statistics (exact doubles) and their source.
std::string norm_stats_fingerprint(const NormStats& s);

inline constexpr double kStdFloor = 1e-12;

/// Per-element mean and (N-1) standard deviation over `indices` (all samples
/// if empty), active cells only.
NormStats compute_norm_stats(const Dataset& ds, const ActiveMask& mask, std::span<const std::size_t> indices = {});

/// Works on a single field shaped like `mean` or on a batch whose trailing
/// axes match it. Inactive or constant cells map to 0.
template <class T>
NdArray<T> normalize(const NdArray<T>& x, const NdArray<double>& mean, const NdArray<double>& std,
                     const ActiveMask& mask);
/// Inverse of normalize on active cells; inactive cells get -1.
template <class T>
NdArray<T> denormalize(const NdArray<T>& x, const NdArray<double>& mean, const NdArray<double>& std,
                       const ActiveMask& mask);

/// Gathers the listed samples of a batch array along axis 0.
template <class T>
NdArray<T> take(const NdArray<T>& batch, std::span<const std::size_t> indices);

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// If `expected_fingerprint` is non-empty it must match (fingerprint-mismatch).
Dataset load_dataset(const std::filesystem::path& dir, const std::string& expected_fingerprint = {});

void save_norm_stats(const std::filesystem::path& dir, const NormStats& s);
NormStats load_norm_stats(const std::filesystem::path& dir);

}  // namespace vaednn
