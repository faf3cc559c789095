#include "vaednn/domain.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "vaednn/hash.hpp"

namespace vaednn {

namespace {

constexpr double kSecondsPerYear = 365.25 * 86400.0;
constexpr double kSecondsPerMonth = kSecondsPerYear / 12.0;

std::string cell_string(CellIndex c) { return "(" + std::to_string(c.i) + "," + std::to_string(c.j) + ")"; }

}  // namespace

ActiveMask::ActiveMask(int n_x1, int n_x2, std::vector<unsigned char> active)
    : n_x1_(n_x1), n_x2_(n_x2), active_(std::move(active)) {
  if (n_x1 <= 0 || n_x2 <= 0 || active_.size() != static_cast<std::size_t>(n_x1) * static_cast<std::size_t>(n_x2)) {
    throw Error(ErrorKind::invalid_geometry, "mask size does not match " + std::to_string(n_x1) + "x" + std::to_string(n_x2));
  }
  position_.assign(active_.size(), -1);
  for (std::size_t k = 0; k < active_.size(); ++k) {
    if (active_[k]) {
      position_[k] = static_cast<int>(active_cells_.size());
      active_cells_.push_back(static_cast<int>(k));
    }
  }
}

std::vector<std::string> ActiveMask::to_rows() const {
  std::vector<std::string> rows(static_cast<std::size_t>(n_x1_), std::string(static_cast<std::size_t>(n_x2_), '0'));
  for (int i = 0; i < n_x1_; ++i)
    for (int j = 0; j < n_x2_; ++j)
      if ((*this)(i, j)) rows[i][j] = '1';
  return rows;
}

ActiveMask ActiveMask::from_rows(const std::vector<std::string>& rows) {
  if (rows.empty()) throw Error(ErrorKind::invalid_geometry, "mask has no rows");
  const std::size_t n2 = rows.front().size();
  std::vector<unsigned char> values;
  values.reserve(rows.size() * n2);
  for (const auto& row : rows) {
    if (row.size() != n2) throw Error(ErrorKind::invalid_geometry, "mask rows have unequal length");
    for (char ch : row) {
      if (ch != '0' && ch != '1') throw Error(ErrorKind::invalid_geometry, std::string("mask character '") + ch + "'");
      values.push_back(ch == '1' ? 1 : 0);
    }
  }
  return ActiveMask(static_cast<int>(rows.size()), static_cast<int>(n2), std::move(values));
}

double StressSchedule::total_duration() const noexcept {
  double t = 0.0;
  for (const auto& p : periods) t += p.duration;
  return t;
}

DomainConfig DomainConfig::freyberg() {
  DomainConfig c;
  c.grid = GridSpec{};

  // 94 inactive cells along the western margin.
  c.mask_rows.assign(40, std::string(20, '1'));
  auto deactivate = [&](int row_begin, int row_end, int width) {
    for (int i = row_begin; i < row_end; ++i)
      for (int j = 0; j < width; ++j) c.mask_rows[i][j] = '0';
  };
  deactivate(0, 8, 6);
  deactivate(8, 14, 4);
  deactivate(14, 20, 2);
  deactivate(32, 37, 2);

  auto& s = c.schedule;
  s.well_cells = {{8, 5}, {14, 9}, {19, 12}, {24, 6}, {27, 11}, {31, 17}, {35, 8}};
  for (int i = 0; i < 40; ++i) {
    s.river_cells.push_back({i, 15});
    s.river_stage_offsets.push_back(1.5 - 3.0 * i / 39.0);
  }
  for (int j = 0; j < 20; ++j) s.robin_cells.push_back({39, j});
  s.robin_conductance = 2.5e-3;
  s.robin_external_head = 16.0;
  s.river_bed_conductance = 0.05;

  const std::vector<double> initial_rates(7, -0.008);
  const std::vector<double> year1_rates = {-0.010, -0.012, -0.008, -0.015, -0.011, -0.009, -0.013};
  const std::vector<double> year2_rates = {-0.018, -0.020, -0.014, -0.019, -0.016, -0.012, -0.017};

  s.periods.push_back({10.0 * kSecondsPerYear, 3.0e-9, initial_rates, 18.0});
  constexpr double kPi = 3.14159265358979323846;
  for (int m = 1; m <= kSnapshotCount; ++m) {
    const double recharge = 3.0e-9 + 2.0e-9 * std::cos(2.0 * kPi * (m - 1) / 12.0);
    s.periods.push_back({kSecondsPerMonth, recharge, m <= 12 ? year1_rates : year2_rates, 18.0});
  }

  c.specific_yield = 0.1;
  c.observation_wells = {{2, 8},   {4, 13},  {6, 18},  {10, 6},  {12, 11}, {16, 3}, {17, 17},
                         {21, 8},  {23, 14}, {26, 2},  {29, 9},  {33, 13}, {37, 5}};
  return c;
}

void to_json(nlohmann::json& j, const CellIndex& c) { j = nlohmann::json::array({c.i, c.j}); }
void from_json(const nlohmann::json& j, CellIndex& c) {
  c.i = j.at(0).get<int>();
  c.j = j.at(1).get<int>();
}

void to_json(nlohmann::json& j, const GridSpec& g) {
  j = {{"n_x1", g.n_x1}, {"n_x2", g.n_x2}, {"d_x1", g.d_x1}, {"d_x2", g.d_x2},
       {"origin", {g.origin_x1, g.origin_x2}}};
}
void from_json(const nlohmann::json& j, GridSpec& g) {
  g.n_x1 = j.value("n_x1", g.n_x1);
  g.n_x2 = j.value("n_x2", g.n_x2);
  g.d_x1 = j.value("d_x1", g.d_x1);
  g.d_x2 = j.value("d_x2", g.d_x2);
  if (j.contains("origin")) {
    g.origin_x1 = j.at("origin").at(0).get<double>();
    g.origin_x2 = j.at("origin").at(1).get<double>();
  }
}

void to_json(nlohmann::json& j, const StressPeriod& p) {
  j = {{"duration", p.duration}, {"recharge_rate", p.recharge_rate}, {"well_rates", p.well_rates},
       {"river_stage", p.river_stage}};
}
void from_json(const nlohmann::json& j, StressPeriod& p) {
  p.duration = j.at("duration").get<double>();
  p.recharge_rate = j.at("recharge_rate").get<double>();
  p.well_rates = j.value("well_rates", std::vector<double>{});
  p.river_stage = j.value("river_stage", 0.0);
}

void to_json(nlohmann::json& j, const StressSchedule& s) {
  j = {{"periods", s.periods},
       {"well_cells", s.well_cells},
       {"river_cells", s.river_cells},
       {"river_stage_offsets", s.river_stage_offsets},
       {"robin_cells", s.robin_cells},
       {"robin_conductance", s.robin_conductance},
       {"robin_external_head", s.robin_external_head},
       {"river_bed_conductance", s.river_bed_conductance}};
}
void from_json(const nlohmann::json& j, StressSchedule& s) {
  if (j.contains("periods")) s.periods = j.at("periods").get<std::vector<StressPeriod>>();
  if (j.contains("well_cells")) s.well_cells = j.at("well_cells").get<std::vector<CellIndex>>();
  if (j.contains("river_cells")) s.river_cells = j.at("river_cells").get<std::vector<CellIndex>>();
  if (j.contains("river_stage_offsets")) s.river_stage_offsets = j.at("river_stage_offsets").get<std::vector<double>>();
  if (j.contains("robin_cells")) s.robin_cells = j.at("robin_cells").get<std::vector<CellIndex>>();
  s.robin_conductance = j.value("robin_conductance", s.robin_conductance);
  s.robin_external_head = j.value("robin_external_head", s.robin_external_head);
  s.river_bed_conductance = j.value("river_bed_conductance", s.river_bed_conductance);
}

void to_json(nlohmann::json& j, const DomainConfig& c) {
  j = {{"grid", c.grid},
       {"mask", c.mask_rows},
       {"schedule", c.schedule},
       {"specific_yield", c.specific_yield},
       {"observation_wells", c.observation_wells}};
}
void from_json(const nlohmann::json& j, DomainConfig& c) {
  c = DomainConfig::freyberg();
  if (j.contains("grid")) from_json(j.at("grid"), c.grid);
  if (j.contains("mask")) c.mask_rows = j.at("mask").get<std::vector<std::string>>();
  if (j.contains("mask_file")) c.mask_rows = load_mask_file(j.at("mask_file").get<std::string>());
  if (j.contains("schedule")) from_json(j.at("schedule"), c.schedule);
  c.specific_yield = j.value("specific_yield", c.specific_yield);
  if (j.contains("observation_wells")) c.observation_wells = j.at("observation_wells").get<std::vector<CellIndex>>();
}

DomainConfig Domain::config() const {
  DomainConfig c;
  c.grid = grid;
  c.mask_rows = mask.to_rows();
  c.schedule = schedule;
  c.specific_yield = specific_yield;
  c.observation_wells = observation_wells;
  return c;
}

std::string Domain::fingerprint() const { return fingerprint_of(nlohmann::json(config()).dump()); }

std::vector<std::string> validate_domain(const Domain& d) {
  std::vector<std::string> v;
  const auto& g = d.grid;
  if (g.n_x1 <= 0 || g.n_x2 <= 0 || !(g.d_x1 > 0.0) || !(g.d_x2 > 0.0)) {
    v.push_back("grid: cell counts and cell sizes must be positive");
  }
  if (d.mask.n_x1() != g.n_x1 || d.mask.n_x2() != g.n_x2) {
    v.push_back("mask: shape does not match the grid");
    return v;
  }
  const auto& s = d.schedule;
  if (s.periods.size() != static_cast<std::size_t>(kPeriodCount)) {
    v.push_back("schedule: expected " + std::to_string(kPeriodCount) + " stress periods, found " +
                std::to_string(s.periods.size()));
  } else {
    bool bad = false;
    for (std::size_t p = 1; p < s.periods.size(); ++p) {
      if (std::abs(s.periods[p].duration - s.periods[1].duration) > 1e-9 * s.periods[1].duration) bad = true;
    }
    if (bad || !(s.periods[0].duration >= s.periods[1].duration)) {
      v.push_back("schedule: periods must be one long initial period followed by equal monthly periods");
    }
  }
  for (std::size_t p = 0; p < s.periods.size(); ++p) {
    if (!(s.periods[p].duration > 0.0)) v.push_back("schedule: period " + std::to_string(p) + " has non-positive duration");
    if (s.periods[p].well_rates.size() != s.well_cells.size()) {
      v.push_back("schedule: period " + std::to_string(p) + " well_rates length does not match well_cells");
    }
  }
  if (s.river_stage_offsets.size() != s.river_cells.size()) {
    v.push_back("schedule: river_stage_offsets length does not match river_cells");
  }
  auto check_cells = [&](const std::vector<CellIndex>& cells, const char* what) {
    for (auto c : cells) {
      if (!d.mask.contains(c)) v.push_back(std::string("schedule: ") + what + " cell " + cell_string(c) + " is not an active cell");
    }
  };
  check_cells(s.well_cells, "well");
  check_cells(s.river_cells, "river");
  check_cells(s.robin_cells, "robin");
  if (s.robin_conductance < 0.0 || s.river_bed_conductance < 0.0) {
    v.push_back("schedule: boundary conductances must be non-negative");
  }
  if (!(d.specific_yield > 0.0 && d.specific_yield < 1.0)) {
    v.push_back("specific yield must lie in (0, 1), got " + std::to_string(d.specific_yield));
  }
  std::set<CellIndex> seen;
  for (auto c : d.observation_wells) {
    if (!d.mask.contains(c)) v.push_back("observation well " + cell_string(c) + " is not an active cell");
    if (!seen.insert(c).second) v.push_back("observation well " + cell_string(c) + " is duplicated");
  }
  return v;
}

Domain build_freyberg_domain(const DomainConfig& config) {
  const auto& g = config.grid;
  if (g.n_x1 <= 0 || g.n_x2 <= 0 || !(g.d_x1 > 0.0) || !(g.d_x2 > 0.0)) {
    throw Error(ErrorKind::invalid_geometry, "cell counts and cell sizes must be positive");
  }
  Domain d;
  d.grid = g;
  if (config.mask_rows.empty()) {
    d.mask = ActiveMask(g.n_x1, g.n_x2, std::vector<unsigned char>(static_cast<std::size_t>(g.cell_count()), 1));
  } else {
    d.mask = ActiveMask::from_rows(config.mask_rows);
  }
  if (d.mask.n_x1() != g.n_x1 || d.mask.n_x2() != g.n_x2) {
    throw Error(ErrorKind::invalid_geometry, "mask shape does not match the grid");
  }
  d.schedule = config.schedule;
  d.specific_yield = config.specific_yield;
  d.observation_wells = config.observation_wells;

  const auto& s = d.schedule;
  for (const auto* cells : {&s.well_cells, &s.river_cells, &s.robin_cells}) {
    for (auto c : *cells) {
      if (!d.mask.contains(c)) {
        throw Error(ErrorKind::stress_cell_outside_mask, "cell " + cell_string(c) + " is outside the active mask");
      }
    }
  }
  auto violations = validate_domain(d);
  if (!violations.empty()) throw Error(ErrorKind::invalid_config, violations.front());
  return d;
}

std::pair<Field2D, Field2D> cell_centers(const Domain& domain) {
  const auto& g = domain.grid;
  const Shape shape{static_cast<std::size_t>(g.n_x1), static_cast<std::size_t>(g.n_x2)};
  Field2D x1(shape), x2(shape);
  for (int i = 0; i < g.n_x1; ++i) {
    for (int j = 0; j < g.n_x2; ++j) {
      x1(i, j) = g.origin_x1 + (i + 0.5) * g.d_x1;
      x2(i, j) = g.origin_x2 + (j + 0.5) * g.d_x2;
    }
  }
  return {std::move(x1), std::move(x2)};
}

std::vector<std::string> parse_mask_text(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string row;
    for (char ch : line) {
      if (ch == '0' || ch == '1') row.push_back(ch);
      else if (ch != ' ' && ch != '\t' && ch != '\r') {
        throw Error(ErrorKind::invalid_geometry, std::string("unexpected mask character '") + ch + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  ActiveMask::from_rows(rows);  // shape validation
  return rows;
}

std::vector<std::string> load_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_error, "cannot open mask file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mask_text(ss.str());
}

DomainConfig load_domain_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_error, "cannot open domain config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_config, path.string() + ": " + e.what());
  }
  DomainConfig c = j.get<DomainConfig>();
  return c;
}

}  // namespace vaednn
