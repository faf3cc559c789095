#include "vaednn/bench.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "vaednn/error.hpp"
#include "vaednn/hash.hpp"
#include "vaednn/metrics.hpp"

namespace fs = std::filesystem;

namespace vaednn {

namespace {

double unix_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::optional<std::uint64_t> read_u64(const fs::path& p) {
  std::ifstream in(p);
  std::uint64_t v = 0;
  if (!(in >> v)) return std::nullopt;
  return v;
}

void hash_file(Fnv1a& h, const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + p.string());
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
}

std::string generic_rel(const fs::path& p, const fs::path& base) { return p.lexically_relative(base).generic_string(); }

}  // namespace

// ------------------------------------------------------------------ energy

EnergyMeter::EnergyMeter() : EnergyMeter(fs::path("/sys/class/powercap/intel-rapl:0")) {}

EnergyMeter::EnergyMeter(fs::path counter_dir) : dir_(std::move(counter_dir)) {
  const auto e = read();
  const auto r = read_u64(dir_ / "max_energy_range_uj");
  available_ = e.has_value();
  range_ = r.value_or(0);
}

EnergyMeter::~EnergyMeter() {
  if (running_) stop();
}

std::optional<std::uint64_t> EnergyMeter::read() const { return read_u64(dir_ / "energy_uj"); }

void EnergyMeter::sample() {
  const auto v = read();
  if (!v) return;
  if (*v >= last_) {
    total_uj_ += *v - last_;
  } else if (range_ > 0) {
    total_uj_ += range_ - last_ + *v;
  }
  last_ = *v;
}

void EnergyMeter::start() {
  if (!available_ || running_) return;
  total_uj_ = 0;
  last_ = read().value_or(0);
  running_ = true;
  thread_ = std::thread([this] {
    while (running_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (running_) sample();
    }
  });
}

std::optional<double> EnergyMeter::stop() {
  if (!available_) return std::nullopt;
  if (running_) {
    running_ = false;
    if (thread_.joinable()) thread_.join();
    sample();
  }
  return static_cast<double>(total_uj_) * 1e-6;
}

long peak_rss_kib() {
  rusage u{};
  if (getrusage(RUSAGE_SELF, &u) != 0) return 0;
  return u.ru_maxrss;
}

std::string content_hash(const fs::path& path) {
  Fnv1a h;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      h.update(generic_rel(f, path));
      hash_file(h, f);
    }
  } else if (fs::is_regular_file(path)) {
    hash_file(h, path);
  } else {
    throw Error(ErrorKind::io_error, "no such input: " + path.string());
  }
  return h.hex();
}

// ------------------------------------------------------------------ manifests

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"command", m.command},
       {"config", m.config},
       {"seeds", m.seeds},
       {"inputs", m.inputs},
       {"outputs", m.outputs},
       {"started_at", m.started_at},
       {"finished_at", m.finished_at},
       {"wall_seconds", m.wall_seconds},
       {"energy_joules", m.energy_joules ? nlohmann::json(*m.energy_joules) : nlohmann::json("unavailable")},
       {"energy_source", m.energy_source},
       {"peak_rss_kib", m.peak_rss_kib},
       {"deterministic", m.deterministic},
       {"results", m.results}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  m = RunManifest{};
  m.command = j.at("command").get<std::string>();
  m.config = j.value("config", nlohmann::json::object());
  m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  m.inputs = j.value("inputs", std::map<std::string, std::string>{});
  m.outputs = j.value("outputs", std::map<std::string, std::string>{});
  m.started_at = j.value("started_at", 0.0);
  m.finished_at = j.value("finished_at", 0.0);
  m.wall_seconds = j.value("wall_seconds", 0.0);
  const auto& e = j.at("energy_joules");
  if (e.is_number()) m.energy_joules = e.get<double>();
  m.energy_source = j.value("energy_source", std::string("unavailable"));
  m.peak_rss_kib = j.value("peak_rss_kib", 0L);
  m.deterministic = j.value("deterministic", true);
  m.results = j.value("results", nlohmann::json::object());
}

RunManifest track_run(const std::string& command, const std::function<void(RunManifest&)>& task) {
  RunManifest m;
  m.command = command;
  EnergyMeter meter;
  const auto t0 = std::chrono::steady_clock::now();
  m.started_at = unix_now();
  meter.start();
  try {
    task(m);
  } catch (...) {
    meter.stop();
    throw;
  }
  m.energy_joules = meter.stop();
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.finished_at = unix_now();
  m.energy_source = m.energy_joules ? meter.source().string() : "unavailable";
  m.peak_rss_kib = peak_rss_kib();
  return m;
}

void record_inputs(RunManifest& m, const std::vector<fs::path>& inputs) {
  for (const auto& p : inputs) m.inputs[p.generic_string()] = content_hash(p);
}

void write_run_manifest(const fs::path& dir, RunManifest& m) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::unwritable_directory, dir.string() + ": " + ec.message());
  m.outputs.clear();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == kRunManifestName) continue;
    // nested stages own their subtrees
    bool nested = false;
    for (auto p = e.path().parent_path(); p != dir && p.has_relative_path(); p = p.parent_path()) {
      if (fs::exists(p / kRunManifestName)) {
        nested = true;
        break;
      }
    }
    if (!nested) m.outputs[generic_rel(e.path(), dir)] = content_hash(e.path());
  }
  const fs::path tmp = dir / (std::string(kRunManifestName) + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + tmp.string());
    out << nlohmann::json(m).dump(2) << "\n";
    if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / kRunManifestName, ec);
  if (ec) throw Error(ErrorKind::unwritable_directory, ec.message());
}

RunManifest read_run_manifest(const fs::path& dir) {
  std::ifstream in(dir / kRunManifestName);
  if (!in) throw Error(ErrorKind::missing_checkpoint, "no run manifest in " + dir.string());
  try {
    return nlohmann::json::parse(in).get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::corrupt_container, "run manifest " + dir.string() + ": " + e.what());
  }
}

ProvenanceReport check_provenance(const fs::path& root) {
  ProvenanceReport rep;
  std::set<std::string> listed;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() != kRunManifestName) continue;
    const fs::path dir = e.path().parent_path();
    RunManifest m;
    try {
      m = read_run_manifest(dir);
    } catch (const Error&) {
      rep.modified.push_back(generic_rel(e.path(), root));
      continue;
    }
    for (const auto& [rel, hash] : m.outputs) {
      const fs::path f = dir / rel;
      const std::string key = generic_rel(f, root);
      listed.insert(key);
      if (!fs::exists(f)) {
        rep.missing.push_back(key);
      } else if (content_hash(f) != hash) {
        rep.modified.push_back(key);
      }
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == kRunManifestName) continue;
    ++rep.checked;
    const std::string key = generic_rel(e.path(), root);
    if (!listed.count(key)) rep.orphans.push_back(key);
  }
  std::sort(rep.orphans.begin(), rep.orphans.end());
  std::sort(rep.modified.begin(), rep.modified.end());
  std::sort(rep.missing.begin(), rep.missing.end());
  return rep;
}

// ------------------------------------------------------------------ comparison

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9e", v);
  return buf;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  os << "model,metric,error,parameters,train_seconds,energy_joules,epochs\r\n";
  for (const auto& r : rows) {
    os << csv_field(r.model) << ',' << r.metric << ',' << format_number(r.error) << ',' << r.parameters << ','
       << format_number(r.train_seconds) << ',' << (r.energy_joules ? format_number(*r.energy_joules) : "unavailable")
       << ',' << r.epochs << "\r\n";
  }
  return os.str();
}

ForwardEvaluation compare_forward(const std::vector<ForwardModel>& models, const Dataset& data,
                                  const std::vector<std::size_t>& indices, const ActiveMask& mask) {
  ForwardEvaluation ev;
  if (models.empty()) return ev;
  if (indices.empty()) throw Error(ErrorKind::insufficient_samples, "no samples to evaluate");
  const std::string fp = dataset_fingerprint(data);
  const NdArray<float> h_ref = take(data.h, std::span<const std::size_t>(indices));
  for (const auto& m : models) {
    if (!m.dataset_fingerprint.empty() && m.dataset_fingerprint != fp) {
      throw Error(ErrorKind::fingerprint_mismatch, m.name + " was trained on dataset " + m.dataset_fingerprint +
                                                       ", evaluation dataset is " + fp);
    }
    NdArray<double> pred(h_ref.shape());
    NdArray<double> ref(h_ref.shape());
    const std::size_t block = h_ref.size() / indices.size();
    for (std::size_t s = 0; s < indices.size(); ++s) {
      const StateField p = m.predict(data.y_field(indices[s]));
      if (p.size() != block) throw Error(ErrorKind::shape_mismatch, m.name + " prediction size");
      std::copy(p.values().begin(), p.values().end(), pred.values().begin() + static_cast<std::ptrdiff_t>(s * block));
      if (s == 0) ev.first_predictions.push_back(p);
    }
    std::copy(h_ref.values().begin(), h_ref.values().end(), ref.values().begin());
    ComparisonRow row;
    row.model = m.name;
    row.metric = "rl2_h";
    row.error = relative_l2(pred, ref, mask);
    row.parameters = m.parameters;
    row.train_seconds = m.train_seconds;
    row.energy_joules = m.energy_joules;
    row.epochs = m.epochs;
    ev.table.rows.push_back(row);
  }
  return ev;
}

}  // namespace vaednn
