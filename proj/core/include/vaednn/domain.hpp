/**
 * @file domain.hpp
 * @brief Freyberg-style testbed geometry, active mask and stress schedule.
 *
 * The default configuration is a 40 x 20 grid of 250 m cells with 706
 * active cells, no-flow north/east/west sides, a head-dependent (Robin)
 * southern boundary, a north-south river and seven pumping wells. The
 * stress layout is a reconstruction: well rates, river stage, boundary
 * conductances and recharge magnitudes are plausible defaults, not
 * published values, and every one of them can be overridden from JSON.
 */
#pragma once

#include <compare>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/ndarray.hpp"

namespace vaednn {

struct CellIndex {
  int i = 0;  ///< index along x1 (long axis, north to south)
  int j = 0;  ///< index along x2 (short axis, west to east)
  auto operator<=>(const CellIndex&) const = default;
};

struct GridSpec {
  int n_x1 = 40;
  int n_x2 = 20;
  double d_x1 = 250.0;
  double d_x2 = 250.0;
  double origin_x1 = 0.0;
  double origin_x2 = 0.0;

  int cell_count() const noexcept { return n_x1 * n_x2; }
  int flat(int i, int j) const noexcept { return i * n_x2 + j; }
  bool contains(CellIndex c) const noexcept { return c.i >= 0 && c.i < n_x1 && c.j >= 0 && c.j < n_x2; }
  bool operator==(const GridSpec&) const = default;
};

/// Boolean activity grid, immutable after construction.
class ActiveMask {
 public:
  ActiveMask() = default;
  ActiveMask(int n_x1, int n_x2, std::vector<unsigned char> active);

  int n_x1() const noexcept { return n_x1_; }
  int n_x2() const noexcept { return n_x2_; }
  bool operator()(int i, int j) const noexcept { return active_[static_cast<std::size_t>(i * n_x2_ + j)] != 0; }
  bool contains(CellIndex c) const noexcept {
    return c.i >= 0 && c.i < n_x1_ && c.j >= 0 && c.j < n_x2_ && (*this)(c.i, c.j);
  }
  bool flat_active(std::size_t k) const noexcept { return active_[k] != 0; }

  std::size_t active_count() const noexcept { return active_cells_.size(); }
  /// Flat indices (i * n_x2 + j) of active cells in row-major order.
  const std::vector<int>& active_cells() const noexcept { return active_cells_; }
  /// Maps a flat index to its position in active_cells(), or -1.
  const std::vector<int>& active_position() const noexcept { return position_; }
  const std::vector<unsigned char>& values() const noexcept { return active_; }

  std::vector<std::string> to_rows() const;
  static ActiveMask from_rows(const std::vector<std::string>& rows);

  bool operator==(const ActiveMask& o) const { return n_x1_ == o.n_x1_ && n_x2_ == o.n_x2_ && active_ == o.active_; }

 private:
  int n_x1_ = 0;
  int n_x2_ = 0;
  std::vector<unsigned char> active_;
  std::vector<int> active_cells_;
  std::vector<int> position_;
};

struct StressPeriod {
  double duration = 0.0;       ///< seconds
  double recharge_rate = 0.0;  ///< m/s, uniform over active cells
  std::vector<double> well_rates;  ///< m^3/s per well, negative = extraction
  double river_stage = 0.0;    ///< m, reference stage added to per-cell offsets
  bool operator==(const StressPeriod&) const = default;
};

struct StressSchedule {
  std::vector<StressPeriod> periods;
  std::vector<CellIndex> well_cells;
  std::vector<CellIndex> river_cells;
  std::vector<double> river_stage_offsets;  ///< per river cell, m
  std::vector<CellIndex> robin_cells;
  double robin_conductance = 0.0;      ///< m^2/s per cell
  double robin_external_head = 0.0;    ///< m
  double river_bed_conductance = 0.0;  ///< m^2/s per cell

  double total_duration() const noexcept;
  bool operator==(const StressSchedule&) const = default;
};

/// Serializable description of a domain. Every field is overridable.
struct DomainConfig {
  GridSpec grid;
  std::vector<std::string> mask_rows;  ///< n_x1 strings of n_x2 '0'/'1' characters
  StressSchedule schedule;
  double specific_yield = 0.1;
  std::vector<CellIndex> observation_wells;

  /// The reconstructed Freyberg layout used throughout the project.
  static DomainConfig freyberg();
  bool operator==(const DomainConfig&) const = default;
};

void to_json(nlohmann::json& j, const CellIndex& c);
void from_json(const nlohmann::json& j, CellIndex& c);
void to_json(nlohmann::json& j, const GridSpec& g);
void from_json(const nlohmann::json& j, GridSpec& g);
void to_json(nlohmann::json& j, const StressPeriod& p);
void from_json(const nlohmann::json& j, StressPeriod& p);
void to_json(nlohmann::json& j, const StressSchedule& s);
void from_json(const nlohmann::json& j, StressSchedule& s);
void to_json(nlohmann::json& j, const DomainConfig& c);
/// Missing keys keep their Freyberg defaults.
void from_json(const nlohmann::json& j, DomainConfig& c);

struct Domain {
  GridSpec grid;
  ActiveMask mask;
  StressSchedule schedule;
  double specific_yield = 0.1;
  std::vector<CellIndex> observation_wells;

  DomainConfig config() const;
  /// Hash of the canonical JSON form of config().
  std::string fingerprint() const;
  bool operator==(const Domain&) const = default;
};

/// Builds and validates a domain. Throws invalid-geometry or
/// stress-cell-outside-mask.
Domain build_freyberg_domain(const DomainConfig& config = DomainConfig::freyberg());

/// Cell-center coordinates in meters, each shaped (n_x1, n_x2).
std::pair<Field2D, Field2D> cell_centers(const Domain& domain);

/// Human-readable invariant violations; empty iff the domain is valid.
std::vector<std::string> validate_domain(const Domain& domain);

/// Parses a plain-text grid of '0'/'1' characters (one row per line).
std::vector<std::string> parse_mask_text(const std::string& text);
std::vector<std::string> load_mask_file(const std::filesystem::path& path);

DomainConfig load_domain_config(const std::filesystem::path& path);

inline constexpr int kSnapshotCount = 24;
inline constexpr int kPeriodCount = kSnapshotCount + 1;

}  // namespace vaednn
