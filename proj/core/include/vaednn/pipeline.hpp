/**
 * @file pipeline.hpp
 * @brief Experiment stages shared by the command-line tool and the acceptance
 *        suite. Each stage reads artifacts from disk, writes its own output
 *        directory and a run manifest there, so stages can run in separate
 *        processes.
 *
 * Default layout under a workspace root:
 *   data/      dataset, normalization statistics, KLE basis
 *   yvae/ hvae/ map/ fno/ deeponet/   checkpoints (map/ also holds bundle.json)
 *   predict/ invert-<method>/ sweep-<method>/ compare/ report/
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/bench.hpp"
#include "vaednn/dataset.hpp"
#include "vaednn/domain.hpp"
#include "vaednn/geostat.hpp"
#include "vaednn/gw_solver.hpp"
#include "vaednn/inversion.hpp"
#include "vaednn/latent_surrogate.hpp"
#include "vaednn/neural_operators.hpp"
#include "vaednn/training.hpp"
#include "vaednn/vae.hpp"

namespace vaednn {

struct PipelineConfig {
  // data
  DomainConfig domain = DomainConfig::freyberg();
  CovarianceModel covariance = CovarianceModel::two_scale();
  SolverConfig solver;
  std::size_t n_samples = 576;
  std::size_t n_train = 512;
  std::size_t n_validation = 32;  ///< the rest is the test split
  std::uint64_t data_seed = 1000;
  int threads = 0;
  double kle_rtol = 0.05;

  // models
  VaeConfig yvae = VaeConfig::y_default();
  VaeConfig hvae = VaeConfig::h_default();
  MapConfig map;
  FnoConfig fno;
  DeepONetConfig deeponet;
  TrainConfig yvae_train{80, 32, 1e-4, 11, {}};
  TrainConfig hvae_train{200, 32, 1e-4, 12, {}};
  TrainConfig map_train{80, 32, 1e-4, 13, {}};
  TrainConfig fno_train{400, 32, 1e-4, 14, {}};
  TrainConfig deeponet_train{400, 32, 1e-4, 15, {}};

  // inversion
  InverseConfig inverse;
  std::vector<double> gammas = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t reference_test_index = 0;  ///< position within the test split
  std::vector<int> report_snapshots = {0, 11, 23};
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Missing keys keep the defaults. Shape: {"data": {...}, "yvae": {"model": {...},
/// "train": {...}}, ..., "inversion": {...}, "report": {...}}.
void from_json(const nlohmann::json& j, PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& file);

/// Resolved split of a generated dataset.
DatasetSplit pipeline_split(const PipelineConfig& cfg, std::size_t n);

/// Directory names inside a workspace.
struct Workspace {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path yvae() const { return root / "yvae"; }
  std::filesystem::path hvae() const { return root / "hvae"; }
  std::filesystem::path map() const { return root / "map"; }
  std::filesystem::path bundle() const { return root / "map" / "bundle.json"; }
  std::filesystem::path fno() const { return root / "fno"; }
  std::filesystem::path deeponet() const { return root / "deeponet"; }
  std::filesystem::path compare() const { return root / "compare"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path invert(InverseMethod m) const { return root / (std::string("invert-") + to_string(m)); }
  std::filesystem::path sweep(InverseMethod m) const { return root / (std::string("sweep-") + to_string(m)); }
};

/// Output root: $VAEDNN_OUTPUT_ROOT if set, else `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

/// Everything stored under data/: the dataset, statistics over the training
/// split and the KLE basis of the training y fields.
struct DataArtifacts {
  Domain domain;
  Dataset dataset;
  DatasetSplit split;
  NormStats stats;
  KleBasis kle;
};

DataArtifacts load_data_artifacts(const std::filesystem::path& data_dir, bool with_kle = true);

// Each stage returns the manifest it wrote to its output directory.
RunManifest stage_generate_data(const PipelineConfig& cfg, const std::filesystem::path& out,
                                const std::string& command = "generate-data");
RunManifest stage_train_yvae(const PipelineConfig& cfg, const std::filesystem::path& data_dir,
                             const std::filesystem::path& out, const std::string& command = "train-yvae");
RunManifest stage_train_hvae(const PipelineConfig& cfg, const std::filesystem::path& data_dir,
                             const std::filesystem::path& out, const std::string& command = "train-hvae");
/// Also writes bundle.json next to the map checkpoint.
RunManifest stage_train_map(const PipelineConfig& cfg, const std::filesystem::path& data_dir,
                            const std::filesystem::path& yvae_dir, const std::filesystem::path& hvae_dir,
                            const std::filesystem::path& out, const std::string& command = "train-map");
RunManifest stage_train_fno(const PipelineConfig& cfg, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out, const std::string& command = "train-fno");
RunManifest stage_train_deeponet(const PipelineConfig& cfg, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& out, const std::string& command = "train-deeponet");

/// Paths of trained models; empty members are absent.
struct ModelPaths {
  std::filesystem::path bundle;  ///< bundle.json of the VAE-DNN
  std::filesystem::path fno;
  std::filesystem::path deeponet;
};

/// Predicts heads for one dataset sample with one method and stores the
/// prediction (container "prediction") plus its rl2_h against the sample.
RunManifest stage_predict(InverseMethod method, const ModelPaths& models, const std::filesystem::path& data_dir,
                          std::size_t sample, const std::filesystem::path& out, const std::string& command = "predict");

/// Inversion for the reference test sample, observations at the domain's wells.
RunManifest stage_invert(const PipelineConfig& cfg, InverseMethod method, const ModelPaths& models,
                         const std::filesystem::path& data_dir, const std::filesystem::path& out,
                         const std::string& command = "invert");
RunManifest stage_sweep(const PipelineConfig& cfg, InverseMethod method, const ModelPaths& models,
                        const std::filesystem::path& data_dir, const std::filesystem::path& out,
                        const std::string& command = "sweep");

/// Held-out rl2_h of every available model plus training cost from the
/// training manifests. Writes forward_results.csv and the first-sample
/// predictions.
RunManifest stage_compare(const PipelineConfig& cfg, const ModelPaths& models, const std::filesystem::path& data_dir,
                          const std::filesystem::path& out, const std::string& command = "compare");

/// Renders figures from compare/ and sweep-* outputs found in the workspace.
RunManifest stage_report(const PipelineConfig& cfg, const Workspace& ws, const std::filesystem::path& out,
                         const std::string& command = "report");

/// Loads a stored sweep table (sweep.json in a sweep stage directory).
std::vector<SweepRow> load_sweep(const std::filesystem::path& sweep_dir);

}  // namespace vaednn
