// vaednn: command-line front end for the experiment stages.
//
// Every subcommand reads an optional JSON config (--config) and applies flag
// overrides on top. On failure a one-line JSON error record goes to stderr
// and the exit code is nonzero.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vaednn/bench.hpp"
#include "vaednn/error.hpp"
#include "vaednn/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vaednn;

namespace {

struct Options {
  std::string config;
  std::string workspace;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> gamma;
  std::optional<std::size_t> n;
  std::optional<int> steps;
  std::optional<int> threads;
  std::string out, data, yvae, hvae, bundle, fno, deeponet;
  std::string method = "vaednn";
  std::size_t sample = 0;
  std::vector<double> gammas;
};

int emit_error(const std::string& command, const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"command", command}}.dump() << std::endl;
  return code;
}

Workspace workspace_of(const Options& o) {
  return Workspace{o.workspace.empty() ? output_root("vaednn-out") : fs::path(o.workspace)};
}

PipelineConfig load_config(const Options& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_pipeline_config(o.config);
  if (o.n) cfg.n_samples = *o.n;
  if (o.threads) cfg.threads = *o.threads;
  if (o.gamma) cfg.inverse.gamma = *o.gamma;
  if (o.steps) cfg.inverse.steps = *o.steps;
  if (!o.gammas.empty()) cfg.gammas = o.gammas;
  if (!(cfg.inverse.gamma >= 0)) throw Error(ErrorKind::invalid_config, "gamma must be >= 0");
  if (cfg.inverse.steps < 1) throw Error(ErrorKind::invalid_config, "steps must be >= 1");
  if (cfg.n_samples < 2) throw Error(ErrorKind::invalid_config, "n must be >= 2");
  return cfg;
}

void override_train(TrainConfig& t, const Options& o) {
  if (o.seed) t.seed = *o.seed;
  if (o.epochs) {
    if (*o.epochs < 0) throw Error(ErrorKind::invalid_config, "epochs must be >= 0");
    t.epochs = *o.epochs;
  }
}

fs::path pick(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

/// Model paths from flags, falling back to the workspace layout when present.
ModelPaths model_paths(const Options& o, const Workspace& ws, bool defaults) {
  ModelPaths p;
  p.bundle = !o.bundle.empty() ? fs::path(o.bundle) : (defaults && fs::exists(ws.bundle()) ? ws.bundle() : fs::path());
  p.fno = !o.fno.empty() ? fs::path(o.fno) : (defaults && fs::exists(ws.fno() / "manifest.json") ? ws.fno() : fs::path());
  p.deeponet = !o.deeponet.empty() ? fs::path(o.deeponet)
                                   : (defaults && fs::exists(ws.deeponet() / "manifest.json") ? ws.deeponet() : fs::path());
  return p;
}

void print_result(const RunManifest& m, const fs::path& out) {
  std::cout << json{{"command", m.command},
                    {"output", out.string()},
                    {"wall_seconds", m.wall_seconds},
                    {"energy_joules", m.energy_joules ? json(*m.energy_joules) : json("unavailable")},
                    {"results", m.results}}
                   .dump(2)
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VAE-DNN surrogate modeling, operator baselines and MAP inversion"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option("--workspace", o.workspace, "workspace root (default $VAEDNN_OUTPUT_ROOT or ./vaednn-out)");
    sc->add_option("--out", o.out, "output directory of this stage");
  };
  auto data_opt = [&](CLI::App* sc) { sc->add_option("--data", o.data, "generated data directory"); };
  auto model_opts = [&](CLI::App* sc) {
    sc->add_option("--bundle", o.bundle, "VAE-DNN bundle manifest (bundle.json)");
    sc->add_option("--fno", o.fno, "FNO checkpoint directory");
    sc->add_option("--deeponet", o.deeponet, "DeepONet checkpoint directory");
  };
  auto train_opts = [&](CLI::App* sc) {
    common(sc);
    data_opt(sc);
    sc->add_option("--seed", o.seed, "training seed");
    sc->add_option("--epochs", o.epochs, "epoch budget");
  };

  auto* gen = app.add_subcommand("generate-data", "simulate (y, h) pairs, fit statistics and the KLE basis");
  common(gen);
  gen->add_option("--n", o.n, "number of samples");
  gen->add_option("--seed", o.seed, "base seed");
  gen->add_option("--threads", o.threads, "solver threads (0: all cores)");

  auto* tyv = app.add_subcommand("train-yvae", "train the y-VAE");
  train_opts(tyv);
  auto* thv = app.add_subcommand("train-hvae", "train the h-VAE");
  train_opts(thv);
  auto* tmap = app.add_subcommand("train-map", "train the latent map from two VAE checkpoints");
  train_opts(tmap);
  tmap->add_option("--yvae", o.yvae, "y-VAE checkpoint directory");
  tmap->add_option("--hvae", o.hvae, "h-VAE checkpoint directory");
  auto* tfno = app.add_subcommand("train-fno", "train the FNO baseline");
  train_opts(tfno);
  auto* tdon = app.add_subcommand("train-deeponet", "train the DeepONet baseline");
  train_opts(tdon);

  auto* pred = app.add_subcommand("predict", "predict heads for one dataset sample");
  common(pred);
  data_opt(pred);
  model_opts(pred);
  pred->add_option("--method", o.method, "vaednn | fno | deeponet");
  pred->add_option("--sample", o.sample, "dataset sample index");

  auto* inv = app.add_subcommand("invert", "MAP estimate of y from the well observations");
  common(inv);
  data_opt(inv);
  model_opts(inv);
  inv->add_option("--method", o.method, "vaednn | fno | deeponet");
  inv->add_option("--gamma", o.gamma, "regularization weight");
  inv->add_option("--steps", o.steps, "optimizer steps");

  auto* sweep = app.add_subcommand("sweep", "inversions over a list of regularization weights");
  common(sweep);
  data_opt(sweep);
  model_opts(sweep);
  sweep->add_option("--method", o.method, "vaednn | fno | deeponet");
  sweep->add_option("--gammas", o.gammas, "regularization weights");
  sweep->add_option("--steps", o.steps, "optimizer steps");

  auto* cmp = app.add_subcommand("compare", "held-out rl2_h and training cost of the trained models");
  common(cmp);
  data_opt(cmp);
  model_opts(cmp);

  auto* rep = app.add_subcommand("report", "CSV tables and SVG figures from compare and sweep outputs");
  common(rep);

  auto* prov = app.add_subcommand("provenance", "check that every output file is listed by a run manifest");
  prov->add_option("--workspace", o.workspace, "tree to check");

  std::string command = "vaednn";
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      std::cerr << app.help();
      return emit_error(command, "usage", e.what(), code);
    }
    return 0;
  }

  try {
    const Workspace ws = workspace_of(o);
    const fs::path data = pick(o.data, ws.data());
    auto* sc = app.get_subcommands().front();
    command = sc->get_name();

    if (sc == prov) {
      const ProvenanceReport r = check_provenance(ws.root);
      std::cout << json{{"checked", r.checked}, {"orphans", r.orphans}, {"modified", r.modified}, {"missing", r.missing}}.dump(2)
                << std::endl;
      if (!r.ok()) {
        return emit_error(command, "provenance", std::to_string(r.orphans.size() + r.modified.size() + r.missing.size()) +
                                                     " file(s) not traceable to a run manifest",
                          1);
      }
      return 0;
    }

    PipelineConfig cfg = load_config(o);
    RunManifest m;
    fs::path out;
    const InverseMethod method = inverse_method_from_string(o.method);

    if (sc == gen) {
      if (o.seed) cfg.data_seed = *o.seed;
      out = pick(o.out, ws.data());
      m = stage_generate_data(cfg, out);
    } else if (sc == tyv) {
      override_train(cfg.yvae_train, o);
      out = pick(o.out, ws.yvae());
      m = stage_train_yvae(cfg, data, out);
    } else if (sc == thv) {
      override_train(cfg.hvae_train, o);
      out = pick(o.out, ws.hvae());
      m = stage_train_hvae(cfg, data, out);
    } else if (sc == tmap) {
      override_train(cfg.map_train, o);
      out = pick(o.out, ws.map());
      m = stage_train_map(cfg, data, pick(o.yvae, ws.yvae()), pick(o.hvae, ws.hvae()), out);
    } else if (sc == tfno) {
      override_train(cfg.fno_train, o);
      out = pick(o.out, ws.fno());
      m = stage_train_fno(cfg, data, out);
    } else if (sc == tdon) {
      override_train(cfg.deeponet_train, o);
      out = pick(o.out, ws.deeponet());
      m = stage_train_deeponet(cfg, data, out);
    } else if (sc == pred) {
      out = pick(o.out, ws.root / "predict");
      m = stage_predict(method, model_paths(o, ws, true), data, o.sample, out);
    } else if (sc == inv) {
      out = pick(o.out, ws.invert(method));
      m = stage_invert(cfg, method, model_paths(o, ws, true), data, out);
    } else if (sc == sweep) {
      out = pick(o.out, ws.sweep(method));
      m = stage_sweep(cfg, method, model_paths(o, ws, true), data, out);
    } else if (sc == cmp) {
      const ModelPaths mp = model_paths(o, ws, true);
      if (mp.bundle.empty() && mp.fno.empty() && mp.deeponet.empty()) {
        throw Error(ErrorKind::invalid_config, "missing field 'bundle', 'fno' or 'deeponet': no trained model found");
      }
      out = pick(o.out, ws.compare());
      m = stage_compare(cfg, mp, data, out);
    } else if (sc == rep) {
      out = pick(o.out, ws.report());
      m = stage_report(cfg, ws, out);
    }
    print_result(m, out);
    return 0;
  } catch (const Error& e) {
    return emit_error(command, to_string(e.kind()), e.detail(), 1);
  } catch (const std::exception& e) {
    return emit_error(command, "internal", e.what(), 1);
  }
}
