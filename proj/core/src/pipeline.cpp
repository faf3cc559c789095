#include "vaednn/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "vaednn/container.hpp"
#include "vaednn/error.hpp"
#include "vaednn/metrics.hpp"
#include "vaednn/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vaednn {

// ------------------------------------------------------------------ config

namespace {

/// Defaults serialized, overlaid with the user's keys, parsed back.
template <class C>
C patched(const C& defaults, const json& j, const char* key) {
  if (!j.contains(key)) return defaults;
  json base = defaults;
  base.merge_patch(j.at(key));
  return base.get<C>();
}

TrainConfig patched_train(const TrainConfig& defaults, const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).contains("train")) return defaults;
  return train_config_from_json(j.at(key).at("train"), defaults);
}

template <class C>
C patched_model(const C& defaults, const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).contains("model")) return defaults;
  json base = defaults;
  base.merge_patch(j.at(key).at("model"));
  return base.get<C>();
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorKind::unwritable_directory, "cannot write " + file.string());
  out << j.dump(2) << "\n";
}

/// Prepares a stage directory. Refuses to clear a non-empty directory that is
/// not a previous stage output.
void prepare_stage_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::unwritable_directory, dir.string() + " is not a directory");
    const bool empty = fs::is_empty(dir);
    if (!empty && !fs::exists(dir / kRunManifestName)) {
      throw Error(ErrorKind::unwritable_directory, dir.string() + " is not empty and holds no earlier stage output");
    }
    for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path(), ec);
  }
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::unwritable_directory, dir.string() + ": " + ec.message());
}

NdArray<float> normalized_y(const DataArtifacts& d, const std::vector<std::size_t>& idx) {
  return normalize(take(d.dataset.y, std::span<const std::size_t>(idx)), d.stats.y_mean, d.stats.y_std, d.domain.mask);
}

NdArray<float> normalized_h(const DataArtifacts& d, const std::vector<std::size_t>& idx) {
  return normalize(take(d.dataset.h, std::span<const std::size_t>(idx)), d.stats.h_mean, d.stats.h_std, d.domain.mask);
}

json data_metadata(const DataArtifacts& d) {
  return {{"stats_fingerprint", norm_stats_fingerprint(d.stats)},
          {"dataset_fingerprint", d.stats.dataset_fingerprint},
          {"domain_fingerprint", d.dataset.domain_fingerprint}};
}

json history_summary(const TrainHistory& h) {
  json j = {{"epochs", h.epochs.size()}, {"seconds", h.seconds}};
  if (!h.epochs.empty()) {
    j["final_train_loss"] = h.epochs.back().train_loss;
    j["final_validation_loss"] = h.epochs.back().validation_loss;
  }
  return j;
}

template <class F>
RunManifest run_stage(const std::string& command, const fs::path& out, const PipelineConfig& cfg, F&& body) {
  prepare_stage_dir(out);
  RunManifest m = track_run(command, [&](RunManifest& rm) {
    rm.config = cfg;
    body(rm);
  });
  write_run_manifest(out, m);
  return m;
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
  j = {{"data",
        {{"domain", c.domain},
         {"covariance", c.covariance},
         {"solver", c.solver},
         {"n", c.n_samples},
         {"n_train", c.n_train},
         {"n_validation", c.n_validation},
         {"seed", c.data_seed},
         {"threads", c.threads},
         {"kle_rtol", c.kle_rtol}}},
       {"yvae", {{"model", c.yvae}, {"train", c.yvae_train}}},
       {"hvae", {{"model", c.hvae}, {"train", c.hvae_train}}},
       {"map", {{"model", c.map}, {"train", c.map_train}}},
       {"fno", {{"model", c.fno}, {"train", c.fno_train}}},
       {"deeponet", {{"model", c.deeponet}, {"train", c.deeponet_train}}},
       {"inversion", {{"config", c.inverse}, {"gammas", c.gammas}, {"reference_test_index", c.reference_test_index}}},
       {"report", {{"snapshots", c.report_snapshots}}}};
}

void from_json(const json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.domain = patched(c.domain, d, "domain");
      c.covariance = patched(c.covariance, d, "covariance");
      c.solver = patched(c.solver, d, "solver");
      c.n_samples = d.value("n", c.n_samples);
      c.n_train = d.value("n_train", c.n_train);
      c.n_validation = d.value("n_validation", c.n_validation);
      c.data_seed = d.value("seed", c.data_seed);
      c.threads = d.value("threads", c.threads);
      c.kle_rtol = d.value("kle_rtol", c.kle_rtol);
    }
    c.yvae = patched_model(c.yvae, j, "yvae");
    c.hvae = patched_model(c.hvae, j, "hvae");
    c.map = patched_model(c.map, j, "map");
    c.fno = patched_model(c.fno, j, "fno");
    c.deeponet = patched_model(c.deeponet, j, "deeponet");
    c.yvae_train = patched_train(c.yvae_train, j, "yvae");
    c.hvae_train = patched_train(c.hvae_train, j, "hvae");
    c.map_train = patched_train(c.map_train, j, "map");
    c.fno_train = patched_train(c.fno_train, j, "fno");
    c.deeponet_train = patched_train(c.deeponet_train, j, "deeponet");
    if (j.contains("inversion")) {
      const auto& v = j.at("inversion");
      if (v.contains("config")) {
        json base = c.inverse;
        base.merge_patch(v.at("config"));
        c.inverse = base.get<InverseConfig>();
      }
      c.gammas = v.value("gammas", c.gammas);
      c.reference_test_index = v.value("reference_test_index", c.reference_test_index);
    }
    if (j.contains("report")) c.report_snapshots = j.at("report").value("snapshots", c.report_snapshots);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, e.what());
  }
  if (c.n_samples < 2) throw Error(ErrorKind::invalid_config, "data.n must be >= 2");
  if (c.gammas.empty()) throw Error(ErrorKind::invalid_config, "inversion.gammas must not be empty");
  for (double g : c.gammas) {
    if (!(g >= 0)) throw Error(ErrorKind::invalid_config, "inversion.gammas must be >= 0");
  }
}

PipelineConfig load_pipeline_config(const fs::path& file) { return read_json(file).get<PipelineConfig>(); }

DatasetSplit pipeline_split(const PipelineConfig& cfg, std::size_t n) {
  std::size_t n_train = cfg.n_train, n_val = cfg.n_validation;
  if (n_train + n_val >= n) {
    // small smoke-test datasets: 80/10/10 with at least one test sample
    n_train = std::max<std::size_t>(1, n * 8 / 10);
    n_val = n / 10;
    if (n_train + n_val >= n) n_val = 0;
    if (n_train >= n) n_train = n - 1;
  }
  DatasetSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) s.train.push_back(i);
    else if (i < n_train + n_val) s.validation.push_back(i);
    else s.test.push_back(i);
  }
  return s;
}

fs::path output_root(const fs::path& fallback) {
  const char* env = std::getenv("VAEDNN_OUTPUT_ROOT");
  if (env && *env) return fs::path(env);
  return fallback;
}

DataArtifacts load_data_artifacts(const fs::path& data_dir, bool with_kle) {
  if (!fs::exists(data_dir / "domain.json")) {
    throw Error(ErrorKind::missing_checkpoint, "no generated data in " + data_dir.string());
  }
  DataArtifacts d;
  d.domain = build_freyberg_domain(read_json(data_dir / "domain.json").get<DomainConfig>());
  d.dataset = load_dataset(data_dir / "dataset", d.domain.fingerprint());
  const json split = read_json(data_dir / "split.json");
  d.split.train = split.at("train").get<std::vector<std::size_t>>();
  d.split.validation = split.at("validation").get<std::vector<std::size_t>>();
  d.split.test = split.at("test").get<std::vector<std::size_t>>();
  d.stats = load_norm_stats(data_dir / "stats");
  if (d.stats.dataset_fingerprint != dataset_fingerprint(d.dataset)) {
    throw Error(ErrorKind::fingerprint_mismatch, "normalization statistics were computed on another dataset");
  }
  if (with_kle) d.kle = load_kle(data_dir / "kle");
  return d;
}

// ------------------------------------------------------------------ data

RunManifest stage_generate_data(const PipelineConfig& cfg, const fs::path& out, const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    const Domain domain = build_freyberg_domain(cfg.domain);
    const Dataset ds = generate_dataset(domain, cfg.covariance, cfg.solver, cfg.n_samples, cfg.data_seed, cfg.threads);
    const DatasetSplit split = pipeline_split(cfg, ds.size());
    const NormStats stats = compute_norm_stats(ds, domain.mask, split.train);
    const KleBasis kle = fit_kle(ds.y, split.train, domain.mask, cfg.kle_rtol);
    save_dataset(out / "dataset", ds);
    save_norm_stats(out / "stats", stats);
    save_kle(out / "kle", kle);
    write_json(out / "domain.json", domain.config());
    write_json(out / "split.json", {{"train", split.train}, {"validation", split.validation}, {"test", split.test}});
    m.seeds = ds.seeds;
    m.results = {{"samples", ds.size()},
                 {"train", split.train.size()},
                 {"validation", split.validation.size()},
                 {"test", split.test.size()},
                 {"kle_n_xi", kle.n_xi},
                 {"kle_stored_modes", kle.stored_modes()},
                 {"dataset_fingerprint", stats.dataset_fingerprint},
                 {"stats_fingerprint", norm_stats_fingerprint(stats)}};
  });
}

// ------------------------------------------------------------------ training

namespace {

RunManifest train_vae_stage(const PipelineConfig& cfg, const VaeConfig& vcfg, const TrainConfig& tcfg, bool is_h,
                            const fs::path& data_dir, const fs::path& out, const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    record_inputs(m, {data_dir / "dataset", data_dir / "stats"});
    const DataArtifacts d = load_data_artifacts(data_dir, false);
    const auto& split = d.split;
    const NdArray<float> train = is_h ? normalized_h(d, split.train) : normalized_y(d, split.train);
    std::optional<NdArray<float>> val;
    if (!split.validation.empty()) val = is_h ? normalized_h(d, split.validation) : normalized_y(d, split.validation);
    Vae<float> model(vcfg, d.domain.mask.values());
    model.initialize(tcfg.seed);
    const TrainHistory h = train_vae(model, train, val ? &*val : nullptr, tcfg);
    save_vae(out, model, h, data_metadata(d));
    m.seeds = {tcfg.seed};
    m.results = history_summary(h);
    m.results["parameter_count"] = model.parameter_count();
  });
}

}  // namespace

RunManifest stage_train_yvae(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& out,
                             const std::string& command) {
  return train_vae_stage(cfg, cfg.yvae, cfg.yvae_train, false, data_dir, out, command);
}

RunManifest stage_train_hvae(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& out,
                             const std::string& command) {
  return train_vae_stage(cfg, cfg.hvae, cfg.hvae_train, true, data_dir, out, command);
}

RunManifest stage_train_map(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& yvae_dir,
                            const fs::path& hvae_dir, const fs::path& out, const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    record_inputs(m, {data_dir / "dataset", data_dir / "stats", yvae_dir, hvae_dir});
    const DataArtifacts d = load_data_artifacts(data_dir, false);
    LoadedVae yv = load_vae(yvae_dir, d.domain.mask.values());
    LoadedVae hv = load_vae(hvae_dir, d.domain.mask.values());
    const LatentPairDataset train =
        build_latent_dataset(yv, hv, normalized_y(d, d.split.train), normalized_h(d, d.split.train));
    std::optional<LatentPairDataset> val;
    if (!d.split.validation.empty()) {
      val = build_latent_dataset(yv, hv, normalized_y(d, d.split.validation), normalized_h(d, d.split.validation));
    }
    MapConfig mc = cfg.map;
    mc.in_dim = yv.model->config().latent_dim;
    mc.out_dim = hv.model->config().latent_dim;
    LatentMap<float> map(mc);
    map.initialize(cfg.map_train.seed);
    const TrainHistory h = train_map(map, train, val ? &*val : nullptr, cfg.map_train);
    save_map(out, map, h, train, data_metadata(d));
    BundlePaths bp;
    bp.y_vae = fs::absolute(yvae_dir);
    bp.h_vae = fs::absolute(hvae_dir);
    bp.map = fs::absolute(out);
    bp.stats = fs::absolute(data_dir / "stats");
    // store paths relative to the manifest so a workspace can be moved
    const fs::path base = fs::absolute(out);
    for (auto* p : {&bp.y_vae, &bp.h_vae, &bp.map, &bp.stats}) *p = p->lexically_normal().lexically_relative(base.lexically_normal());
    save_bundle_manifest(out / "bundle.json", bp);
    m.seeds = {cfg.map_train.seed};
    m.results = history_summary(h);
    m.results["parameter_count"] = map.parameter_count();
  });
}

RunManifest stage_train_fno(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& out,
                            const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    record_inputs(m, {data_dir / "dataset", data_dir / "stats"});
    const DataArtifacts d = load_data_artifacts(data_dir, false);
    const OperatorData train{normalized_y(d, d.split.train), normalized_h(d, d.split.train)};
    std::optional<OperatorData> val;
    if (!d.split.validation.empty()) val = OperatorData{normalized_y(d, d.split.validation), normalized_h(d, d.split.validation)};
    FnoConfig fc = cfg.fno;
    fc.n_x1 = d.domain.mask.n_x1();
    fc.n_x2 = d.domain.mask.n_x2();
    Fno<float> model(fc, d.domain.mask.values());
    model.initialize(cfg.fno_train.seed);
    const TrainHistory h = train_fno(model, train, val ? &*val : nullptr, cfg.fno_train);
    save_fno(out, model, h, data_metadata(d));
    m.seeds = {cfg.fno_train.seed};
    m.results = history_summary(h);
    m.results["parameter_count"] = model.parameter_count();
  });
}

RunManifest stage_train_deeponet(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& out,
                                 const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    record_inputs(m, {data_dir / "dataset", data_dir / "stats", data_dir / "kle"});
    const DataArtifacts d = load_data_artifacts(data_dir, true);
    const auto& mask = d.domain.mask;
    const int n_xi = cfg.deeponet.n_xi;
    const auto make = [&](const std::vector<std::size_t>& idx) {
      return DeepONetData{kle_features(d.kle, take(d.dataset.y, std::span<const std::size_t>(idx)), n_xi),
                          deeponet_targets(normalized_h(d, idx), mask)};
    };
    const DeepONetData train = make(d.split.train);
    std::optional<DeepONetData> val;
    if (!d.split.validation.empty()) val = make(d.split.validation);
    const nn::Matrix<float> coords = deeponet_coordinates(mask, cfg.deeponet.n_t);
    DeepONet<float> model(cfg.deeponet);
    model.initialize(cfg.deeponet_train.seed);
    const TrainHistory h = train_deeponet(model, coords, train, val ? &*val : nullptr, cfg.deeponet_train);
    json meta = data_metadata(d);
    meta["kle_fingerprint"] = d.kle.fingerprint();
    save_deeponet(out, model, h, meta);
    m.seeds = {cfg.deeponet_train.seed};
    m.results = history_summary(h);
    m.results["parameter_count"] = model.parameter_count();
  });
}

// ------------------------------------------------------------------ loaded models

namespace {

struct LoadedModels {
  std::unique_ptr<SurrogateBundle> bundle;
  LoadedFno fno;
  LoadedDeepONet deeponet;
};

void require_path(const fs::path& p, const char* field) {
  if (p.empty()) throw Error(ErrorKind::invalid_config, std::string("missing field '") + field + "'");
}

void check_dataset(const json& meta, const DataArtifacts& d, const std::string& what) {
  const auto fp = meta.value("dataset_fingerprint", std::string());
  if (fp != d.stats.dataset_fingerprint) {
    throw Error(ErrorKind::fingerprint_mismatch, what + " was trained on dataset " + fp + ", data directory holds " +
                                                     d.stats.dataset_fingerprint);
  }
}

std::unique_ptr<SurrogateBundle> open_bundle(const fs::path& file, const DataArtifacts& d) {
  auto b = SurrogateBundle::assemble(load_bundle_manifest(file), d.domain.mask);
  if (b->stats().dataset_fingerprint != d.stats.dataset_fingerprint) {
    throw Error(ErrorKind::fingerprint_mismatch, "bundle statistics come from another dataset");
  }
  return b;
}

LoadedFno open_fno(const fs::path& dir, const DataArtifacts& d) {
  LoadedFno f = load_fno(dir, d.domain.mask.values());
  check_dataset(f.metadata, d, "FNO");
  return f;
}

LoadedDeepONet open_deeponet(const fs::path& dir, const DataArtifacts& d) {
  LoadedDeepONet o = load_deeponet(dir);
  check_kle_fingerprint(o, d.kle);
  check_dataset(o.metadata, d, "DeepONet");
  return o;
}

StateField predict_with(InverseMethod method, LoadedModels& lm, const DataArtifacts& d, const Field2D& y) {
  switch (method) {
    case InverseMethod::vaednn: return lm.bundle->predict(y);
    case InverseMethod::fno: return fno_predict(*lm.fno.model, d.stats, d.domain.mask, y);
    case InverseMethod::deeponet: return deeponet_predict(*lm.deeponet.model, d.kle, d.stats, d.domain.mask, y);
  }
  throw Error(ErrorKind::invalid_config, "unknown method");
}

void require_model(InverseMethod method, const ModelPaths& models) {
  switch (method) {
    case InverseMethod::vaednn: require_path(models.bundle, "bundle"); break;
    case InverseMethod::fno: require_path(models.fno, "fno"); break;
    case InverseMethod::deeponet: require_path(models.deeponet, "deeponet"); break;
  }
}

void open_for(InverseMethod method, const ModelPaths& models, const DataArtifacts& d, LoadedModels& lm) {
  switch (method) {
    case InverseMethod::vaednn:
      require_path(models.bundle, "bundle");
      lm.bundle = open_bundle(models.bundle, d);
      break;
    case InverseMethod::fno:
      require_path(models.fno, "fno");
      lm.fno = open_fno(models.fno, d);
      break;
    case InverseMethod::deeponet:
      require_path(models.deeponet, "deeponet");
      lm.deeponet = open_deeponet(models.deeponet, d);
      break;
  }
}

std::vector<fs::path> model_inputs(InverseMethod method, const ModelPaths& models) {
  switch (method) {
    case InverseMethod::vaednn: {
      const BundlePaths bp = load_bundle_manifest(models.bundle);
      return {models.bundle, bp.y_vae, bp.map, bp.h_vae, bp.stats};
    }
    case InverseMethod::fno: return {models.fno};
    case InverseMethod::deeponet: return {models.deeponet};
  }
  return {};
}

std::size_t reference_sample(const PipelineConfig& cfg, const DataArtifacts& d) {
  if (d.split.test.empty()) throw Error(ErrorKind::insufficient_samples, "the dataset has no test split");
  if (cfg.reference_test_index >= d.split.test.size()) {
    throw Error(ErrorKind::invalid_config, "reference_test_index beyond the test split");
  }
  return d.split.test[cfg.reference_test_index];
}

std::unique_ptr<InverseObjective> make_objective(InverseMethod method, LoadedModels& lm, const DataArtifacts& d,
                                                 const ObservationSet& obs, double gamma) {
  switch (method) {
    case InverseMethod::vaednn:
      return std::make_unique<VaeDnnObjective<float>>(lm.bundle->y_vae(), lm.bundle->map(), lm.bundle->h_vae(),
                                                      lm.bundle->stats(), lm.bundle->mask(), obs, gamma);
    case InverseMethod::fno:
      return std::make_unique<FnoObjective<float>>(*lm.fno.model, d.stats, d.domain.mask, obs, gamma);
    case InverseMethod::deeponet:
      return std::make_unique<DeepONetObjective<float>>(*lm.deeponet.model, d.kle, d.stats, d.domain.mask, obs, gamma);
  }
  throw Error(ErrorKind::invalid_config, "unknown method");
}

json field_json(const Field2D& f) { return f.values(); }

}  // namespace

RunManifest stage_predict(InverseMethod method, const ModelPaths& models, const fs::path& data_dir, std::size_t sample,
                          const fs::path& out, const std::string& command) {
  require_model(method, models);
  PipelineConfig cfg;
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    m.config = {{"method", to_string(method)}, {"sample", sample}};
    const DataArtifacts d = load_data_artifacts(data_dir, method == InverseMethod::deeponet);
    if (sample >= d.dataset.size()) throw Error(ErrorKind::invalid_config, "sample index beyond the dataset");
    LoadedModels lm;
    open_for(method, models, d, lm);
    record_inputs(m, model_inputs(method, models));
    const Field2D y = d.dataset.y_field(sample);
    const StateField h = predict_with(method, lm, d, y);
    const StateField ref = d.dataset.h_field(sample);
    Container c;
    c.kind = "prediction";
    c.metadata = {{"method", to_string(method)}, {"sample", sample}};
    c.put("h", h);
    save_container(out / "prediction", c);
    m.results = {{"rl2_h", relative_l2(h, ref, d.domain.mask)}};
  });
}

RunManifest stage_invert(const PipelineConfig& cfg, InverseMethod method, const ModelPaths& models,
                         const fs::path& data_dir, const fs::path& out, const std::string& command) {
  require_model(method, models);
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    const DataArtifacts d = load_data_artifacts(data_dir, method == InverseMethod::deeponet);
    LoadedModels lm;
    open_for(method, models, d, lm);
    record_inputs(m, model_inputs(method, models));
    const std::size_t s = reference_sample(cfg, d);
    const Field2D y_ref = d.dataset.y_field(s);
    const ObservationSet obs = sample_observations(y_ref, d.dataset.h_field(s), d.domain.observation_wells, d.domain.mask);
    auto objective = make_objective(method, lm, d, obs, cfg.inverse.gamma);
    InverseConfig ic = cfg.inverse;
    ic.method = method;
    const InverseResult r = minimize(*objective, ic, &y_ref, &d.domain.mask);
    save_inverse_result(out / "result", r, {{"reference_sample", s}, {"observations", obs}});
    m.results = {{"rl2_y", r.rl2_y ? json(*r.rl2_y) : json(nullptr)},
                 {"initial_loss", r.initial.total},
                 {"final_loss", r.final.total},
                 {"gamma", ic.gamma},
                 {"reference_sample", s}};
  });
}

RunManifest stage_sweep(const PipelineConfig& cfg, InverseMethod method, const ModelPaths& models,
                        const fs::path& data_dir, const fs::path& out, const std::string& command) {
  require_model(method, models);
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    const DataArtifacts d = load_data_artifacts(data_dir, method == InverseMethod::deeponet);
    LoadedModels lm;
    open_for(method, models, d, lm);
    record_inputs(m, model_inputs(method, models));
    const std::size_t s = reference_sample(cfg, d);
    const Field2D y_ref = d.dataset.y_field(s);
    const ObservationSet obs = sample_observations(y_ref, d.dataset.h_field(s), d.domain.observation_wells, d.domain.mask);
    auto objective = make_objective(method, lm, d, obs, cfg.inverse.gamma);
    InverseConfig ic = cfg.inverse;
    ic.method = method;
    const auto rows = gamma_sweep(*objective, cfg.gammas, ic, &y_ref, &d.domain.mask);
    json table = sweep_to_json(rows);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].ok) table[k]["y"] = field_json(rows[k].result.y);
    }
    write_json(out / "sweep.json", {{"method", to_string(method)},
                                    {"reference_sample", s},
                                    {"wells", d.domain.observation_wells},
                                    {"rows", table}});
    m.results = {{"method", to_string(method)}, {"rows", sweep_to_json(rows)}};
  });
}

std::vector<SweepRow> load_sweep(const fs::path& sweep_dir) {
  const json j = read_json(sweep_dir / "sweep.json");
  std::vector<SweepRow> rows;
  const InverseMethod method = inverse_method_from_string(j.at("method").get<std::string>());
  for (const auto& r : j.at("rows")) {
    SweepRow row;
    row.gamma = r.at("gamma").get<double>();
    row.ok = r.at("ok").get<bool>();
    row.result.method = method;
    row.result.config.gamma = row.gamma;
    if (row.ok) {
      if (!r.at("rl2_y").is_null()) row.result.rl2_y = r.at("rl2_y").get<double>();
      row.result.final.total = r.at("final_loss").get<double>();
      row.result.initial.total = r.at("initial_loss").get<double>();
      row.result.seconds = r.value("seconds", 0.0);
      if (r.contains("y")) {
        const auto v = r.at("y").get<std::vector<double>>();
        row.result.y = Field2D({v.size()}, v);
      }
    } else {
      row.error = r.value("error", std::string());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ------------------------------------------------------------------ compare / report

namespace {

struct StageCost {
  double seconds = 0.0;
  std::optional<double> joules;
  bool energy_complete = true;
  int epochs = 0;
};

void add_cost(StageCost& c, const fs::path& dir) {
  const RunManifest m = read_run_manifest(dir);
  c.seconds += m.wall_seconds;
  if (m.energy_joules && c.energy_complete) {
    c.joules = c.joules.value_or(0.0) + *m.energy_joules;
  } else {
    c.energy_complete = false;
    c.joules.reset();
  }
  c.epochs += m.results.value("epochs", 0);
}

}  // namespace

RunManifest stage_compare(const PipelineConfig& cfg, const ModelPaths& models, const fs::path& data_dir,
                          const fs::path& out, const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    const DataArtifacts d = load_data_artifacts(data_dir, !models.deeponet.empty());
    LoadedModels lm;
    std::vector<ForwardModel> fm;
    std::vector<std::pair<std::string, fs::path>> inputs;
    if (!models.bundle.empty()) {
      lm.bundle = open_bundle(models.bundle, d);
      const BundlePaths bp = load_bundle_manifest(models.bundle);
      StageCost cost;
      for (const auto& p : {bp.y_vae, bp.h_vae, bp.map}) add_cost(cost, p);
      ForwardModel f;
      f.name = "VAE-DNN";
      f.predict = [&](const Field2D& y) { return lm.bundle->predict(y); };
      f.parameters = lm.bundle->parameter_count();
      f.train_seconds = cost.seconds;
      f.energy_joules = cost.joules;
      f.epochs = cost.epochs;
      f.dataset_fingerprint = lm.bundle->stats().dataset_fingerprint;
      fm.push_back(std::move(f));
      for (const auto& p : model_inputs(InverseMethod::vaednn, models)) record_inputs(m, {p});
      m.results["components"] = {{"y-VAE", read_run_manifest(bp.y_vae).results},
                                 {"h-VAE", read_run_manifest(bp.h_vae).results},
                                 {"DNN", read_run_manifest(bp.map).results}};
      for (const auto& [name, p] : {std::pair<std::string, fs::path>{"y-VAE", bp.y_vae}, {"h-VAE", bp.h_vae}, {"DNN", bp.map}}) {
        const RunManifest rm = read_run_manifest(p);
        m.results["components"][name]["wall_seconds"] = rm.wall_seconds;
        m.results["components"][name]["energy_joules"] = rm.energy_joules ? json(*rm.energy_joules) : json("unavailable");
      }
    }
    if (!models.deeponet.empty()) {
      lm.deeponet = open_deeponet(models.deeponet, d);
      StageCost cost;
      add_cost(cost, models.deeponet);
      ForwardModel f;
      f.name = "DeepONet";
      f.predict = [&](const Field2D& y) { return deeponet_predict(*lm.deeponet.model, d.kle, d.stats, d.domain.mask, y); };
      f.parameters = lm.deeponet.model->parameter_count();
      f.train_seconds = cost.seconds;
      f.energy_joules = cost.joules;
      f.epochs = cost.epochs;
      f.dataset_fingerprint = lm.deeponet.metadata.value("dataset_fingerprint", std::string());
      fm.push_back(std::move(f));
      record_inputs(m, {models.deeponet});
    }
    if (!models.fno.empty()) {
      lm.fno = open_fno(models.fno, d);
      StageCost cost;
      add_cost(cost, models.fno);
      ForwardModel f;
      f.name = "FNO";
      f.predict = [&](const Field2D& y) { return fno_predict(*lm.fno.model, d.stats, d.domain.mask, y); };
      f.parameters = lm.fno.model->parameter_count();
      f.train_seconds = cost.seconds;
      f.energy_joules = cost.joules;
      f.epochs = cost.epochs;
      f.dataset_fingerprint = lm.fno.metadata.value("dataset_fingerprint", std::string());
      fm.push_back(std::move(f));
      record_inputs(m, {models.fno});
    }
    const ForwardEvaluation test = compare_forward(fm, d.dataset, d.split.test, d.domain.mask);
    // training-sample check: same number of samples as the test split
    std::vector<std::size_t> train_probe(d.split.train.begin(),
                                         d.split.train.begin() + static_cast<std::ptrdiff_t>(std::min(d.split.train.size(), d.split.test.size())));
    const ForwardEvaluation train = compare_forward(fm, d.dataset, train_probe, d.domain.mask);

    {
      std::ofstream csv(out / "forward_results.csv", std::ios::binary);
      csv << test.table.to_csv();
    }
    Container c;
    c.kind = "forward_predictions";
    c.metadata = {{"sample", d.split.test.empty() ? json(nullptr) : json(d.split.test.front())}, {"models", json::array()}};
    for (std::size_t k = 0; k < fm.size(); ++k) {
      c.put("model" + std::to_string(k), test.first_predictions[k]);
      c.metadata["models"].push_back(fm[k].name);
    }
    if (!d.split.test.empty()) c.put("reference", d.dataset.h_field(d.split.test.front()));
    save_container(out / "predictions", c);

    json rows = json::array();
    for (std::size_t k = 0; k < test.table.rows.size(); ++k) {
      const auto& r = test.table.rows[k];
      rows.push_back({{"model", r.model},
                      {"rl2_h", r.error},
                      {"rl2_h_train", train.table.rows[k].error},
                      {"parameters", r.parameters},
                      {"train_seconds", r.train_seconds},
                      {"energy_joules", r.energy_joules ? json(*r.energy_joules) : json("unavailable")},
                      {"epochs", r.epochs}});
    }
    m.results["rows"] = rows;
    write_json(out / "comparison.json", rows);
  });
}

RunManifest stage_report(const PipelineConfig& cfg, const Workspace& ws, const fs::path& out, const std::string& command) {
  return run_stage(command, out, cfg, [&](RunManifest& m) {
    std::vector<std::string> files;
    const DataArtifacts d = load_data_artifacts(ws.data(), false);
    if (fs::exists(ws.compare() / "comparison.json")) {
      record_inputs(m, {ws.compare()});
      ComparisonTable table;
      for (const auto& r : read_json(ws.compare() / "comparison.json")) {
        ComparisonRow row;
        row.model = r.at("model").get<std::string>();
        row.metric = "rl2_h";
        row.error = r.at("rl2_h").get<double>();
        row.parameters = r.at("parameters").get<std::size_t>();
        row.train_seconds = r.at("train_seconds").get<double>();
        if (r.at("energy_joules").is_number()) row.energy_joules = r.at("energy_joules").get<double>();
        row.epochs = r.at("epochs").get<int>();
        table.rows.push_back(row);
      }
      const Container c = load_container(ws.compare() / "predictions");
      std::vector<NamedField> preds;
      const auto names = c.metadata.at("models").get<std::vector<std::string>>();
      for (std::size_t k = 0; k < names.size(); ++k) preds.push_back({names[k], c.get<double>("model" + std::to_string(k))});
      for (const auto& f : render_forward_report(out / "forward", table, c.get<double>("reference"), preds, d.domain.mask,
                                                 cfg.report_snapshots)) {
        files.push_back("forward/" + f);
      }
    }
    std::vector<NamedSweep> sweeps;
    std::vector<NamedField> best;
    std::optional<std::size_t> ref_sample;
    std::vector<CellIndex> wells;
    for (InverseMethod meth : {InverseMethod::vaednn, InverseMethod::fno, InverseMethod::deeponet}) {
      const fs::path dir = ws.sweep(meth);
      if (!fs::exists(dir / "sweep.json")) continue;
      record_inputs(m, {dir});
      const json sj = read_json(dir / "sweep.json");
      ref_sample = sj.at("reference_sample").get<std::size_t>();
      wells = sj.at("wells").get<std::vector<CellIndex>>();
      NamedSweep s{to_string(meth), load_sweep(dir)};
      const SweepRow* b = nullptr;
      for (const auto& r : s.rows) {
        if (r.ok && r.result.rl2_y && (!b || *r.result.rl2_y < *b->result.rl2_y)) b = &r;
      }
      if (b && b->result.y.size() == static_cast<std::size_t>(d.domain.mask.n_x1() * d.domain.mask.n_x2())) {
        Field2D y({static_cast<std::size_t>(d.domain.mask.n_x1()), static_cast<std::size_t>(d.domain.mask.n_x2())},
                  b->result.y.values());
        best.push_back({s.name, std::move(y)});
      }
      sweeps.push_back(std::move(s));
    }
    if (!sweeps.empty()) {
      for (const auto& f : render_sweep_report(out / "inverse", sweeps)) files.push_back("inverse/" + f);
      if (ref_sample && !best.empty()) {
        for (const auto& f : render_inverse_maps(out / "inverse", d.dataset.y_field(*ref_sample), best, d.domain.mask, wells)) {
          files.push_back("inverse/" + f);
        }
      }
    }
    if (files.empty()) throw Error(ErrorKind::missing_checkpoint, "nothing to report: no compare or sweep outputs in " + ws.root.string());
    m.results = {{"files", files}};
  });
}

}  // namespace vaednn
