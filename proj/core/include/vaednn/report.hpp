/**
 * @file report.hpp
 * @brief CSV tables and SVG figures for forward and inverse results.
 *
 * Output is a pure function of the inputs (fixed number formatting, no
 * timestamps), so reruns are byte-identical. Every SVG carries the plotted
 * values in a <metadata> block for comparison without decoding graphics.
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vaednn/bench.hpp"
#include "vaednn/domain.hpp"
#include "vaednn/inversion.hpp"

namespace vaednn {

struct NamedField {
  std::string name;
  NdArray<double> values;
};

struct NamedSweep {
  std::string name;
  std::vector<SweepRow> rows;
};

/// forward_results.csv, heads_reference.svg (three snapshots) and one
/// heads_error_<model>.svg per model with the pointwise errors at the same
/// snapshots. Returns the written file names. Throws unwritable-directory.
std::vector<std::string> render_forward_report(const std::filesystem::path& out_dir, const ComparisonTable& table,
                                               const StateField& h_ref, const std::vector<NamedField>& predictions,
                                               const ActiveMask& mask, const std::vector<int>& snapshots);

/// gamma_sweep.csv and gamma_curves.svg (log-x, one curve per method).
std::vector<std::string> render_sweep_report(const std::filesystem::path& out_dir,
                                             const std::vector<NamedSweep>& sweeps);

/// inverse_results.csv and inverse_maps.svg: estimated y, reference and
/// point error per method.
std::vector<std::string> render_inverse_maps(const std::filesystem::path& out_dir, const Field2D& y_ref,
                                             const std::vector<NamedField>& estimates, const ActiveMask& mask,
                                             const std::vector<CellIndex>& wells = {});

/// Heat map of one (n1, n2) plane; inactive cells are drawn grey.
std::string svg_heatmap_group(const double* plane, const ActiveMask& mask, double x0, double y0, double cell,
                              double lo, double hi, const std::string& title);

}  // namespace vaednn
