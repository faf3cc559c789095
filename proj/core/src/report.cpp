#include "vaednn/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "vaednn/error.hpp"
#include "vaednn/metrics.hpp"

namespace fs = std::filesystem;

namespace vaednn {

namespace {

constexpr double kCell = 8.0;
constexpr double kGap = 24.0;
constexpr double kTitle = 20.0;

std::string num(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string rgb(double t) {
  // viridis, five anchors
  static constexpr std::array<std::array<double, 3>, 5> c = {{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                              {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int k = std::min(static_cast<int>(t), 3);
  const double f = t - k;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c[k][0] + f * (c[k + 1][0] - c[k][0]))),
                static_cast<int>(std::lround(c[k][1] + f * (c[k + 1][1] - c[k][1]))),
                static_cast<int>(std::lround(c[k][2] + f * (c[k + 1][2] - c[k][2]))));
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + file.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::unwritable_directory, dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw Error(ErrorKind::unwritable_directory, dir.string());
  }
  fs::remove(probe, ec);
}

std::pair<double, double> active_range(const std::vector<const double*>& planes, const ActiveMask& mask) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const double* p : planes)
    for (int f : mask.active_cells()) {
      lo = std::min(lo, p[f]);
      hi = std::max(hi, p[f]);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w, 6) + "\" height=\"" + num(h, 6) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string metadata_block(const nlohmann::json& data) {
  std::string dump = data.dump();
  std::string safe;
  // keep the payload valid XML text
  for (char ch : dump) safe += ch == '<' ? std::string("\\u003c") : ch == '&' ? std::string("\\u0026") : std::string(1, ch);
  return "<metadata>" + safe + "</metadata>\n";
}

std::vector<double> active_values(const double* plane, const ActiveMask& mask) {
  std::vector<double> out;
  for (int f : mask.active_cells()) out.push_back(plane[f]);
  return out;
}

std::string colorbar(double x, double y, double h, double lo, double hi) {
  std::ostringstream os;
  const int steps = 32;
  for (int s = 0; s < steps; ++s) {
    const double t = 1.0 - (s + 0.5) / steps;
    os << "<rect x=\"" << num(x, 6) << "\" y=\"" << num(y + s * h / steps, 6) << "\" width=\"10\" height=\""
       << num(h / steps + 0.5, 6) << "\" fill=\"" << rgb(t) << "\"/>\n";
  }
  os << "<text x=\"" << num(x + 14, 6) << "\" y=\"" << num(y + 8, 6) << "\">" << num(hi) << "</text>\n";
  os << "<text x=\"" << num(x + 14, 6) << "\" y=\"" << num(y + h, 6) << "\">" << num(lo) << "</text>\n";
  return os.str();
}

}  // namespace

std::string svg_heatmap_group(const double* plane, const ActiveMask& mask, double x0, double y0, double cell,
                              double lo, double hi, const std::string& title) {
  std::ostringstream os;
  os << "<g>\n<text x=\"" << num(x0, 6) << "\" y=\"" << num(y0 - 6, 6) << "\">" << escape(title) << "</text>\n";
  for (int i = 0; i < mask.n_x1(); ++i)
    for (int j = 0; j < mask.n_x2(); ++j) {
      const int f = i * mask.n_x2() + j;
      const std::string fill = mask(i, j) ? rgb((plane[f] - lo) / (hi - lo)) : std::string("#bdbdbd");
      os << "<rect x=\"" << num(x0 + j * cell, 6) << "\" y=\"" << num(y0 + i * cell, 6) << "\" width=\""
         << num(cell, 6) << "\" height=\"" << num(cell, 6) << "\" fill=\"" << fill << "\"/>\n";
    }
  os << "</g>\n";
  return os.str();
}

std::vector<std::string> render_forward_report(const fs::path& out_dir, const ComparisonTable& table,
                                               const StateField& h_ref, const std::vector<NamedField>& predictions,
                                               const ActiveMask& mask, const std::vector<int>& snapshots) {
  ensure_dir(out_dir);
  const std::size_t plane = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  if (h_ref.rank() != 3 || h_ref.dim(1) * h_ref.dim(2) != plane) {
    throw Error(ErrorKind::shape_mismatch, "reference heads must be (N_t, n1, n2)");
  }
  for (int t : snapshots) {
    if (t < 0 || static_cast<std::size_t>(t) >= h_ref.dim(0)) throw Error(ErrorKind::invalid_config, "snapshot out of range");
  }
  std::vector<std::string> files;
  write_text(out_dir / "forward_results.csv", table.to_csv());
  files.push_back("forward_results.csv");

  const double pw = mask.n_x2() * kCell, ph = mask.n_x1() * kCell;
  const double width = static_cast<double>(snapshots.size()) * (pw + kGap) + 60.0, height = ph + kTitle + 30.0;

  {
    std::vector<const double*> planes;
    for (int t : snapshots) planes.push_back(h_ref.values().data() + static_cast<std::size_t>(t) * plane);
    const auto [lo, hi] = active_range(planes, mask);
    std::ostringstream os;
    os << svg_open(width, height);
    nlohmann::json meta = {{"kind", "heads_reference"}, {"snapshots", snapshots}, {"values", nlohmann::json::array()}};
    for (std::size_t s = 0; s < snapshots.size(); ++s) {
      os << svg_heatmap_group(planes[s], mask, 10 + s * (pw + kGap), kTitle + 10, kCell, lo, hi,
                              "h_ref, t = " + std::to_string(snapshots[s]));
      meta["values"].push_back(active_values(planes[s], mask));
    }
    os << colorbar(width - 45, kTitle + 10, ph, lo, hi) << metadata_block(meta) << "</svg>\n";
    write_text(out_dir / "heads_reference.svg", os.str());
    files.push_back("heads_reference.svg");
  }

  for (const auto& p : predictions) {
    if (p.values.shape() != h_ref.shape()) throw Error(ErrorKind::shape_mismatch, p.name + " prediction shape");
    std::vector<std::vector<double>> err;
    double m = 0.0;
    for (int t : snapshots) {
      std::vector<double> e(plane, 0.0);
      for (int f : mask.active_cells()) {
        const std::size_t k = static_cast<std::size_t>(t) * plane + static_cast<std::size_t>(f);
        e[static_cast<std::size_t>(f)] = p.values[k] - h_ref[k];
        m = std::max(m, std::abs(e[static_cast<std::size_t>(f)]));
      }
      err.push_back(std::move(e));
    }
    if (!(m > 0)) m = 1.0;
    std::ostringstream os;
    os << svg_open(width, height);
    nlohmann::json meta = {{"kind", "heads_error"}, {"model", p.name}, {"snapshots", snapshots}, {"values", nlohmann::json::array()}};
    for (std::size_t s = 0; s < snapshots.size(); ++s) {
      os << svg_heatmap_group(err[s].data(), mask, 10 + s * (pw + kGap), kTitle + 10, kCell, -m, m,
                              p.name + " error, t = " + std::to_string(snapshots[s]));
      meta["values"].push_back(active_values(err[s].data(), mask));
    }
    os << colorbar(width - 45, kTitle + 10, ph, -m, m) << metadata_block(meta) << "</svg>\n";
    const std::string name = "heads_error_" + p.name + ".svg";
    write_text(out_dir / name, os.str());
    files.push_back(name);
  }
  return files;
}

std::vector<std::string> render_sweep_report(const fs::path& out_dir, const std::vector<NamedSweep>& sweeps) {
  ensure_dir(out_dir);
  std::ostringstream csv;
  csv << "method,gamma,ok,rl2_y,initial_loss,final_loss,error\r\n";
  double gmin = std::numeric_limits<double>::infinity(), gmax = 0, emin = gmin, emax = 0;
  for (const auto& s : sweeps)
    for (const auto& r : s.rows) {
      csv << csv_field(s.name) << ',' << format_number(r.gamma) << ',' << (r.ok ? "true" : "false") << ','
          << (r.ok && r.result.rl2_y ? format_number(*r.result.rl2_y) : "") << ','
          << (r.ok ? format_number(r.result.initial.total) : "") << ','
          << (r.ok ? format_number(r.result.final.total) : "") << ',' << csv_field(r.error) << "\r\n";
      if (r.gamma > 0) {
        gmin = std::min(gmin, r.gamma);
        gmax = std::max(gmax, r.gamma);
      }
      if (r.ok && r.result.rl2_y) {
        emin = std::min(emin, *r.result.rl2_y);
        emax = std::max(emax, *r.result.rl2_y);
      }
    }
  write_text(out_dir / "gamma_sweep.csv", csv.str());

  const double W = 520, H = 340, L = 70, R = 130, T = 20, B = 50;
  if (!(gmax > gmin)) {
    gmin = gmin > 0 && std::isfinite(gmin) ? gmin / 10 : 1e-6;
    gmax = gmin * 100;
  }
  if (!(emax > emin)) {
    emin = std::isfinite(emin) ? emin * 0.9 : 0.0;
    emax = emin + 1.0;
  }
  const double lx0 = std::log10(gmin), lx1 = std::log10(gmax);
  const double pad = 0.05 * (emax - emin);
  const double y0 = emin - pad, y1 = emax + pad;
  auto px = [&](double g) { return L + (std::log10(g) - lx0) / (lx1 - lx0) * (W - L - R); };
  auto py = [&](double e) { return H - B - (e - y0) / (y1 - y0) * (H - T - B); };
  static const std::array<const char*, 6> colors = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

  std::ostringstream os;
  os << svg_open(W, H);
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int d = static_cast<int>(std::ceil(lx0 - 1e-9)); d <= static_cast<int>(std::floor(lx1 + 1e-9)); ++d) {
    const double x = px(std::pow(10.0, d));
    os << "<line x1=\"" << num(x, 6) << "\" y1=\"" << H - B << "\" x2=\"" << num(x, 6) << "\" y2=\"" << H - B + 4
       << "\" stroke=\"black\"/>\n<text x=\"" << num(x - 12, 6) << "\" y=\"" << H - B + 16 << "\">1e" << d << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double e = y0 + k * (y1 - y0) / 4;
    os << "<text x=\"" << 8 << "\" y=\"" << num(py(e) + 4, 6) << "\">" << num(e, 3) << "</text>\n";
  }
  os << "<text x=\"" << num((W - R + L) / 2 - 30, 6) << "\" y=\"" << H - 12 << "\">gamma (log scale)</text>\n";
  os << "<text x=\"8\" y=\"14\">relative l2 error of y</text>\n";
  nlohmann::json meta = {{"kind", "gamma_curves"}, {"curves", nlohmann::json::array()}};
  for (std::size_t s = 0; s < sweeps.size(); ++s) {
    const char* col = colors[s % colors.size()];
    std::string pts;
    nlohmann::json curve = {{"method", sweeps[s].name}, {"gamma", nlohmann::json::array()}, {"rl2_y", nlohmann::json::array()}};
    for (const auto& r : sweeps[s].rows) {
      if (!r.ok || !r.result.rl2_y || !(r.gamma > 0)) continue;
      pts += num(px(r.gamma), 6) + "," + num(py(*r.result.rl2_y), 6) + " ";
      os << "<circle cx=\"" << num(px(r.gamma), 6) << "\" cy=\"" << num(py(*r.result.rl2_y), 6) << "\" r=\"3\" fill=\""
         << col << "\"/>\n";
      curve["gamma"].push_back(r.gamma);
      curve["rl2_y"].push_back(*r.result.rl2_y);
    }
    os << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(W - R + 10, 6) << "\" y=\"" << num(T + 16 + 16.0 * s, 6) << "\" fill=\"" << col << "\">"
       << escape(sweeps[s].name) << "</text>\n";
    meta["curves"].push_back(std::move(curve));
  }
  os << metadata_block(meta) << "</svg>\n";
  write_text(out_dir / "gamma_curves.svg", os.str());
  return {"gamma_sweep.csv", "gamma_curves.svg"};
}

std::vector<std::string> render_inverse_maps(const fs::path& out_dir, const Field2D& y_ref,
                                             const std::vector<NamedField>& estimates, const ActiveMask& mask,
                                             const std::vector<CellIndex>& wells) {
  ensure_dir(out_dir);
  const std::size_t plane = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  if (y_ref.size() != plane) throw Error(ErrorKind::shape_mismatch, "reference y must be (n1, n2)");
  std::ostringstream csv;
  csv << "method,rl2_y\r\n";
  std::vector<const double*> planes = {y_ref.values().data()};
  for (const auto& e : estimates) {
    if (e.values.size() != plane) throw Error(ErrorKind::shape_mismatch, e.name + " estimate shape");
    planes.push_back(e.values.values().data());
    csv << csv_field(e.name) << ',' << format_number(relative_l2(e.values, y_ref, mask)) << "\r\n";
  }
  write_text(out_dir / "inverse_results.csv", csv.str());

  const auto [lo, hi] = active_range(planes, mask);
  const double pw = mask.n_x2() * kCell, ph = mask.n_x1() * kCell;
  const double W = 3 * (pw + kGap) + 60, H = std::max<std::size_t>(estimates.size(), 1) * (ph + kTitle + 16) + 20;
  std::ostringstream os;
  os << svg_open(W, H);
  nlohmann::json meta = {{"kind", "inverse_maps"}, {"reference", active_values(y_ref.values().data(), mask)},
                         {"rows", nlohmann::json::array()}};
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    const double y0 = kTitle + 10 + r * (ph + kTitle + 16);
    std::vector<double> err(plane, 0.0);
    double m = 0.0;
    for (int f : mask.active_cells()) {
      err[static_cast<std::size_t>(f)] = estimates[r].values[static_cast<std::size_t>(f)] - y_ref[static_cast<std::size_t>(f)];
      m = std::max(m, std::abs(err[static_cast<std::size_t>(f)]));
    }
    if (!(m > 0)) m = 1.0;
    os << svg_heatmap_group(estimates[r].values.values().data(), mask, 10, y0, kCell, lo, hi, estimates[r].name + " estimate");
    os << svg_heatmap_group(y_ref.values().data(), mask, 10 + pw + kGap, y0, kCell, lo, hi, "reference");
    os << svg_heatmap_group(err.data(), mask, 10 + 2 * (pw + kGap), y0, kCell, -m, m, "point error");
    for (const auto& w : wells) {
      for (int k = 0; k < 2; ++k) {
        os << "<circle cx=\"" << num(10 + k * (pw + kGap) + (w.j + 0.5) * kCell, 6) << "\" cy=\""
           << num(y0 + (w.i + 0.5) * kCell, 6) << "\" r=\"2.5\" fill=\"none\" stroke=\"white\"/>\n";
      }
    }
    meta["rows"].push_back({{"method", estimates[r].name},
                            {"estimate", active_values(estimates[r].values.values().data(), mask)},
                            {"error", active_values(err.data(), mask)}});
  }
  os << colorbar(W - 45, kTitle + 10, ph, lo, hi) << metadata_block(meta) << "</svg>\n";
  write_text(out_dir / "inverse_maps.svg", os.str());
  return {"inverse_results.csv", "inverse_maps.svg"};
}

}  // namespace vaednn
