#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "vaednn/bench.hpp"
#include "vaednn/metrics.hpp"
#include "vaednn/report.hpp"

using namespace vaednn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vaednn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const Domain& freyberg() {
  static const Domain d = build_freyberg_domain();
  return d;
}

StateField random_heads(std::uint64_t seed, std::size_t nt = 24) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(20, 2);
  StateField h({nt, 40, 20}, kInactiveSentinel);
  for (std::size_t t = 0; t < nt; ++t)
    for (int c : freyberg().mask.active_cells()) h[t * 800 + static_cast<std::size_t>(c)] = n(rng);
  return h;
}

}  // namespace

TEST_CASE("relative l2 is scale aware") {
  const StateField ref = random_heads(1);
  for (double c : {0.0, 0.5, 1.0, 1.7, 3.0}) {
    StateField pred = ref;
    for (auto& v : pred.values()) v *= c;
    CHECK(relative_l2(pred, ref, freyberg().mask) == doctest::Approx(std::abs(c - 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("relative l2 against a direct computation, inactive cells ignored") {
  const StateField ref = random_heads(2, 3), pred0 = random_heads(3, 3);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (int c : freyberg().mask.active_cells()) {
      const auto k = t * 800 + static_cast<std::size_t>(c);
      num += std::pow(pred0[k] - ref[k], 2);
      den += ref[k] * ref[k];
    }
  CHECK(relative_l2(pred0, ref, freyberg().mask) == doctest::Approx(std::sqrt(num / den)).epsilon(1e-12));

  StateField pred = pred0, ref2 = ref;
  pred[0] = 1e6;   // inactive corner
  ref2[800] = -3;  // inactive corner, second snapshot
  CHECK(std::abs(relative_l2(pred, ref2, freyberg().mask) - relative_l2(pred0, ref, freyberg().mask)) <= 1e-12);

  NdArray<float> a({40, 20}, 1.0f), b({40, 20}, 2.0f);
  CHECK(relative_l2(a, b, freyberg().mask) == doctest::Approx(0.5));
}

TEST_CASE("relative l2 errors") {
  const StateField ref = random_heads(4, 2);
  try {
    relative_l2(ref, StateField({2, 40, 20}, 0.0), freyberg().mask);
    FAIL("expected zero-reference");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::zero_reference);
  }
  try {
    relative_l2(ref, random_heads(4, 3), freyberg().mask);
    FAIL("expected shape-mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape_mismatch);
  }
}

TEST_CASE("run tracking measures wall time") {
  const RunManifest m = track_run("sleep", [](RunManifest& r) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    r.results["x"] = 1;
  });
  CHECK(m.command == "sleep");
  CHECK(m.wall_seconds >= 0.1);
  CHECK(m.wall_seconds < 0.2);
  CHECK(m.finished_at - m.started_at == doctest::Approx(m.wall_seconds).epsilon(0.05));
  CHECK(m.results["x"] == 1);
  CHECK(m.peak_rss_kib > 0);
  if (!EnergyMeter().available()) {
    CHECK_FALSE(m.energy_joules.has_value());
    CHECK(m.energy_source == "unavailable");
    CHECK(nlohmann::json(m)["energy_joules"] == "unavailable");
  }
}

TEST_CASE("energy meter sums counter increments across a wraparound") {
  const fs::path dir = scratch("rapl");
  write_file(dir / "max_energy_range_uj", "1000000\n");
  write_file(dir / "energy_uj", "900000\n");
  EnergyMeter m(dir);
  REQUIRE(m.available());
  m.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(250));
  write_file(dir / "energy_uj", "950000\n");
  std::this_thread::sleep_for(std::chrono::milliseconds(250));
  write_file(dir / "energy_uj", "200000\n");  // wrapped: +50000 + 200000
  std::this_thread::sleep_for(std::chrono::milliseconds(250));
  const auto joules = m.stop();
  REQUIRE(joules.has_value());
  CHECK(*joules == doctest::Approx(0.3).epsilon(1e-9));

  EnergyMeter none(dir / "absent");
  CHECK_FALSE(none.available());
  none.start();
  CHECK_FALSE(none.stop().has_value());
  fs::remove_all(dir);
}

TEST_CASE("run manifest round trip") {
  RunManifest m;
  m.command = "train";
  m.config = {{"epochs", 3}};
  m.seeds = {1, 2};
  m.inputs["a"] = "h1";
  m.energy_joules = 12.5;
  m.energy_source = "rapl";
  m.results = {{"loss", 0.5}};
  nlohmann::json j = m;
  const RunManifest back = j.get<RunManifest>();
  CHECK(back.command == "train");
  CHECK(back.seeds == m.seeds);
  CHECK(back.inputs == m.inputs);
  CHECK(back.energy_joules == 12.5);
  CHECK(back.results == m.results);
}

TEST_CASE("provenance detects orphans, edits and deletions") {
  const fs::path root = scratch("provenance");
  write_file(root / "stage/a.txt", "alpha");
  write_file(root / "stage/sub/b.bin", "beta");
  RunManifest m = track_run("stage", [](RunManifest&) {});
  write_run_manifest(root / "stage", m);
  CHECK(m.outputs.count("a.txt") == 1);
  CHECK(m.outputs.count("sub/b.bin") == 1);
  CHECK(read_run_manifest(root / "stage").outputs == m.outputs);

  ProvenanceReport r = check_provenance(root);
  CHECK(r.ok());
  CHECK(r.checked == 2);

  write_file(root / "stage/c.txt", "stray");
  r = check_provenance(root);
  CHECK(r.orphans.size() == 1);
  fs::remove(root / "stage/c.txt");

  write_file(root / "stage/a.txt", "ALPHA");
  r = check_provenance(root);
  CHECK(r.modified.size() == 1);
  write_file(root / "stage/a.txt", "alpha");

  fs::remove(root / "stage/sub/b.bin");
  r = check_provenance(root);
  CHECK(r.missing.size() == 1);
  write_file(root / "stage/sub/b.bin", "beta");
  CHECK(check_provenance(root).ok());

  // Deleting nothing but the manifest makes every file an orphan.
  fs::remove(root / "stage" / kRunManifestName);
  r = check_provenance(root);
  CHECK_FALSE(r.ok());
  CHECK(r.orphans.size() == 2);
  fs::remove_all(root);
}

TEST_CASE("nested stage directories keep their own manifests") {
  const fs::path root = scratch("provenance_nested");
  write_file(root / "outer/inner/x.txt", "x");
  RunManifest inner = track_run("inner", [](RunManifest&) {});
  write_run_manifest(root / "outer/inner", inner);
  write_file(root / "outer/y.txt", "y");
  RunManifest outer = track_run("outer", [](RunManifest&) {});
  write_run_manifest(root / "outer", outer);
  CHECK(outer.outputs.count("y.txt") == 1);
  CHECK(outer.outputs.count("inner/x.txt") == 0);
  CHECK(check_provenance(root).ok());
  fs::remove_all(root);
}

TEST_CASE("content hashes") {
  const fs::path root = scratch("hash");
  write_file(root / "d/a", "1");
  write_file(root / "d/b", "2");
  const std::string h = content_hash(root / "d");
  CHECK(content_hash(root / "d") == h);
  write_file(root / "d/b", "3");
  CHECK(content_hash(root / "d") != h);
  CHECK(content_hash(root / "d/a") != content_hash(root / "d/b"));
  fs::remove_all(root);
}

TEST_CASE("CSV quoting and the comparison table") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_field("two\nlines") == "\"two\nlines\"");
  CHECK(format_number(0.5) == format_number(0.5));

  ComparisonTable t;
  t.rows.push_back({"VAE-DNN", "rl2_h", 0.0123, 100, 9.5, std::nullopt, 3});
  t.rows.push_back({"F,NO", "rl2_h", 0.02, 200, 30.0, 5.0, 4});
  const std::string csv = t.to_csv();
  CHECK(csv == t.to_csv());
  CHECK(csv.rfind("model,metric,error,parameters,train_seconds,energy_joules,epochs\r\n", 0) == 0);
  CHECK(csv.find("\"F,NO\"") != std::string::npos);
  CHECK(csv.find("unavailable") != std::string::npos);
  int lines = 0;
  for (std::size_t p = 0; (p = csv.find("\r\n", p)) != std::string::npos; p += 2) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("forward comparison covers exactly the requested models") {
  Dataset ds;
  ds.domain_fingerprint = freyberg().fingerprint();
  ds.seeds = {1, 2};
  ds.y = NdArray<float>({2, 40, 20}, 0.5f);
  ds.h = NdArray<float>({2, 24, 40, 20});
  const StateField h0 = random_heads(9);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t k = 0; k < h0.size(); ++k) ds.h[s * h0.size() + k] = static_cast<float>(h0[k]);

  auto exact = [&](const Field2D&) {
    StateField h({24, 40, 20});
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = static_cast<float>(h0[k]);
    return h;
  };
  auto scaled = [&](const Field2D& y) {
    StateField h = exact(y);
    for (auto& v : h.values()) v *= 1.1;
    return h;
  };
  std::vector<ForwardModel> models = {{"exact", exact, 10, 1.0, std::nullopt, 2, dataset_fingerprint(ds)},
                                      {"scaled", scaled, 20, 2.0, 4.0, 3, ""}};
  const auto ev = compare_forward(models, ds, {0, 1}, freyberg().mask);
  REQUIRE(ev.table.rows.size() == 2);
  CHECK(ev.table.rows[0].model == "exact");
  CHECK(ev.table.rows[0].error == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ev.table.rows[1].error == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(ev.table.rows[1].parameters == 20);
  CHECK(ev.first_predictions.size() == 2);

  CHECK(compare_forward({}, ds, {0}, freyberg().mask).table.rows.empty());
  models[0].dataset_fingerprint = "elsewhere";
  try {
    compare_forward(models, ds, {0}, freyberg().mask);
    FAIL("expected fingerprint-mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::fingerprint_mismatch);
  }
}

TEST_CASE("forward report writes one CSV and an image per model plus the reference") {
  const fs::path out = scratch("report_forward");
  ComparisonTable t;
  t.rows.push_back({"VAE-DNN", "rl2_h", 0.01, 1, 1.0, std::nullopt, 1});
  t.rows.push_back({"FNO", "rl2_h", 0.02, 1, 1.0, std::nullopt, 1});
  t.rows.push_back({"DeepONet", "rl2_h", 0.03, 1, 1.0, std::nullopt, 1});
  const StateField ref = random_heads(1);
  std::vector<NamedField> preds = {{"VAE-DNN", random_heads(2)}, {"FNO", random_heads(3)}, {"DeepONet", random_heads(4)}};
  const auto files = render_forward_report(out, t, ref, preds, freyberg().mask, {0, 11, 23});
  CHECK(files.size() == 5);
  int svg = 0, csv = 0;
  for (const auto& f : fs::directory_iterator(out)) {
    svg += f.path().extension() == ".svg";
    csv += f.path().extension() == ".csv";
  }
  CHECK(svg == 4);
  CHECK(csv == 1);
  CHECK(read_file(out / "forward_results.csv") == t.to_csv());
  const std::string first = read_file(out / "heads_reference.svg");
  CHECK(first.rfind("<svg", 0) == 0);
  CHECK(first.find("<metadata>") != std::string::npos);

  // Reruns are byte-identical.
  render_forward_report(out, t, ref, preds, freyberg().mask, {0, 11, 23});
  CHECK(read_file(out / "heads_reference.svg") == first);
  fs::remove_all(out);
}

TEST_CASE("sweep and inverse map reports") {
  const fs::path out = scratch("report_inverse");
  auto row = [](double g, double e) {
    SweepRow r;
    r.gamma = g;
    r.ok = true;
    r.result.rl2_y = e;
    r.result.trace = {1.0, 0.5};
    return r;
  };
  std::vector<NamedSweep> sweeps = {{"vaednn", {row(1e-3, 0.2), row(1e-2, 0.1), row(1e-1, 0.3)}},
                                    {"fno", {row(1e-3, 0.4), row(1e-2, 0.41), row(1e-1, 0.42)}}};
  const auto files = render_sweep_report(out, sweeps);
  CHECK(files.size() == 2);
  const std::string csv = read_file(out / "gamma_sweep.csv");
  CHECK(csv.find("vaednn") != std::string::npos);
  CHECK(fs::exists(out / "gamma_curves.svg"));

  Field2D y_ref({40, 20}, kInactiveSentinel);
  for (int c : freyberg().mask.active_cells()) y_ref[static_cast<std::size_t>(c)] = -8.0 + 0.001 * c;
  const auto maps = render_inverse_maps(out, y_ref, {{"vaednn", y_ref}, {"fno", y_ref}}, freyberg().mask,
                                        freyberg().observation_wells);
  CHECK(maps.size() == 2);
  CHECK(fs::exists(out / "inverse_maps.svg"));
  CHECK(fs::exists(out / "inverse_results.csv"));

  write_file(out / "blocker", "x");
  try {
    render_sweep_report(out / "blocker" / "sub", sweeps);
    FAIL("expected unwritable-directory");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unwritable_directory);
  }
  fs::remove_all(out);
}
