/**
 * @file bench.hpp
 * @brief Run tracking (wall time, energy, peak memory), run manifests and the
 *        provenance check over an output tree, and the model comparison table.
 */
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/dataset.hpp"
#include "vaednn/domain.hpp"

namespace vaednn {

inline constexpr const char* kRunManifestName = "run_manifest.json";

/// Samples a cumulative energy counter (RAPL powercap layout: energy_uj and
/// max_energy_range_uj) at 10 Hz on a background thread and sums the
/// increments, handling counter wraparound. Reports nothing when the counter
/// cannot be read.
class EnergyMeter {
 public:
  /// Default counter: /sys/class/powercap/intel-rapl:0.
  EnergyMeter();
  explicit EnergyMeter(std::filesystem::path counter_dir);
  ~EnergyMeter();
  EnergyMeter(const EnergyMeter&) = delete;
  EnergyMeter& operator=(const EnergyMeter&) = delete;

  bool available() const noexcept { return available_; }
  void start();
  /// Joules since start(), or nullopt when unavailable.
  std::optional<double> stop();
  const std::filesystem::path& source() const noexcept { return dir_; }

 private:
  std::optional<std::uint64_t> read() const;
  void sample();

  std::filesystem::path dir_;
  bool available_ = false;
  std::uint64_t range_ = 0;
  std::uint64_t last_ = 0;
  std::uint64_t total_uj_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

/// Peak resident set size of this process so far, in KiB.
long peak_rss_kib();

/// Content hash of a file, or of a directory (relative paths and bytes of
/// every regular file, in sorted order).
std::string content_hash(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;   ///< path -> content hash
  std::map<std::string, std::string> outputs;  ///< path relative to the manifest dir -> content hash
  double started_at = 0.0;                     ///< seconds since the Unix epoch
  double finished_at = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> energy_joules;          ///< nullopt: unavailable
  std::string energy_source = "unavailable";
  long peak_rss_kib = 0;
  bool deterministic = true;                    ///< false if the backend could reorder reductions
  nlohmann::json results = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

/// Runs `task`, filling timing, energy and memory fields of a manifest.
RunManifest track_run(const std::string& command, const std::function<void(RunManifest&)>& task);

/// Adds a content hash for each input path.
void record_inputs(RunManifest& m, const std::vector<std::filesystem::path>& inputs);

/// Hashes every file under `dir` (except run manifests) into m.outputs and
/// writes dir/run_manifest.json. Throws unwritable-directory.
void write_run_manifest(const std::filesystem::path& dir, RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& dir);

struct ProvenanceReport {
  std::vector<std::string> orphans;   ///< files no manifest lists
  std::vector<std::string> modified;  ///< listed, but the content hash differs
  std::vector<std::string> missing;   ///< listed, but absent
  std::size_t checked = 0;
  bool ok() const noexcept { return orphans.empty() && modified.empty() && missing.empty(); }
};

/// Every regular file under `root` must be listed by a run manifest in its
/// own directory or an ancestor (within root) with a matching hash.
ProvenanceReport check_provenance(const std::filesystem::path& root);

// ------------------------------------------------------------------ comparison

struct ComparisonRow {
  std::string model;
  std::string metric;  ///< "rl2_h" or "rl2_y"
  double error = 0.0;
  std::size_t parameters = 0;
  double train_seconds = 0.0;
  std::optional<double> energy_joules;
  int epochs = 0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::string to_csv() const;
};

/// A trained forward surrogate as seen by the comparison.
struct ForwardModel {
  std::string name;
  std::function<StateField(const Field2D&)> predict;  ///< raw y -> raw heads
  std::size_t parameters = 0;
  double train_seconds = 0.0;
  std::optional<double> energy_joules;
  int epochs = 0;
  std::string dataset_fingerprint;  ///< dataset the model was trained on
};

struct ForwardEvaluation {
  ComparisonTable table;
  /// Predictions for the first evaluated sample, per model (report input).
  std::vector<StateField> first_predictions;
};

/// rl2_h of each model over the listed samples, all snapshots and active
/// cells stacked into one vector. Throws fingerprint-mismatch when a model
/// was trained on another dataset.
ForwardEvaluation compare_forward(const std::vector<ForwardModel>& models, const Dataset& data,
                                  const std::vector<std::size_t>& indices, const ActiveMask& mask);

/// RFC 4180 quoting of one field.
std::string csv_field(const std::string& s);
/// Shortest-stable scientific formatting used by every CSV writer.
std::string format_number(double v);

}  // namespace vaednn
