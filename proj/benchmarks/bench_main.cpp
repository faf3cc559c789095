// Microbenchmarks of the hot paths: spectral transforms, the flow solver,
// KLE fitting and one optimizer step of each surrogate.

#include <random>

#include <benchmark/benchmark.h>

#include "vaednn/geostat.hpp"
#include "vaednn/gw_solver.hpp"
#include "vaednn/neural_operators.hpp"
#include "vaednn/nn/spectral.hpp"
#include "vaednn/vae.hpp"

using namespace vaednn;

namespace {

const Domain& freyberg() {
  static const Domain d = build_freyberg_domain();
  return d;
}

template <class T>
nn::Matrix<T> noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  nn::Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
  return m;
}

void BM_Dft2Forward(benchmark::State& st) {
  const auto planes = st.range(0);
  nn::Dft2<float> dft(40, 20);
  const auto u = noise<float>(planes, 800, 1);
  nn::Matrix<float> re, im;
  for (auto _ : st) {
    dft.forward(u, re, im);
    benchmark::DoNotOptimize(re.data());
  }
  st.SetItemsProcessed(st.iterations() * planes);
}
BENCHMARK(BM_Dft2Forward)->Arg(1)->Arg(24)->Arg(128);

void BM_SpectralConv(benchmark::State& st) {
  const int width = static_cast<int>(st.range(0));
  nn::SpectralConv2d<float> conv({width, 40, 20}, width, 8, 8);
  std::mt19937_64 rng(2);
  conv.initialize(rng);
  const auto x = noise<float>(4, width * 800, 3);
  for (auto _ : st) {
    auto y = conv.forward(x);
    auto dx = conv.backward(y);
    benchmark::DoNotOptimize(dx.data());
  }
}
BENCHMARK(BM_SpectralConv)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SteadySolve(benchmark::State& st) {
  const Domain& d = freyberg();
  const Field2D k = conductivity_from_log(d, sample_log_conductivity(d, CovarianceModel::two_scale(), 4));
  for (auto _ : st) benchmark::DoNotOptimize(solve_steady(d, k, d.schedule.periods[0].recharge_rate, SolverConfig{}));
}
BENCHMARK(BM_SteadySolve)->Unit(benchmark::kMillisecond);

void BM_SimulatePair(benchmark::State& st) {
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(simulate_pair(freyberg(), CovarianceModel::two_scale(), ++seed, SolverConfig{}));
}
BENCHMARK(BM_SimulatePair)->Unit(benchmark::kMillisecond);

void BM_SampleLogConductivity(benchmark::State& st) {
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(sample_log_conductivity(freyberg(), CovarianceModel::two_scale(), ++seed));
}
BENCHMARK(BM_SampleLogConductivity)->Unit(benchmark::kMillisecond);

void BM_KleFit(benchmark::State& st) {
  std::vector<Field2D> ens;
  for (std::uint64_t s = 0; s < static_cast<std::uint64_t>(st.range(0)); ++s)
    ens.push_back(sample_log_conductivity(freyberg(), CovarianceModel::two_scale(), s));
  for (auto _ : st) benchmark::DoNotOptimize(fit_kle(ens, freyberg().mask, 0.05));
}
BENCHMARK(BM_KleFit)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_VaeStep(benchmark::State& st) {
  const VaeConfig c = st.range(0) == 0 ? VaeConfig::y_default() : VaeConfig::h_default();
  Vae<float> m(c, freyberg().mask.values());
  m.initialize(5);
  const auto x = noise<float>(32, m.features(), 6);
  const auto eps = noise<float>(32, c.latent_dim, 7);
  for (auto _ : st) {
    m.zero_grad();
    benchmark::DoNotOptimize(vae_objective(m, x, eps, true).total);
  }
  st.SetLabel(st.range(0) == 0 ? "y-VAE, batch 32" : "h-VAE, batch 32");
}
BENCHMARK(BM_VaeStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_FnoStep(benchmark::State& st) {
  Fno<float> m(FnoConfig{}, freyberg().mask.values());
  m.initialize(8);
  const auto batch = st.range(0);
  const auto y = noise<float>(batch, 800, 9), h = noise<float>(batch, 24 * 800, 10);
  for (auto _ : st) {
    m.zero_grad();
    benchmark::DoNotOptimize(fno_objective(m, y, h, true));
  }
}
BENCHMARK(BM_FnoStep)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DeepONetStep(benchmark::State& st) {
  DeepONet<float> m(DeepONetConfig{});
  m.initialize(11);
  const auto coords = deeponet_coordinates(freyberg().mask, 24);
  const auto batch = st.range(0);
  const auto xi = noise<float>(batch, 150, 12), t = noise<float>(batch, coords.rows(), 13);
  for (auto _ : st) {
    m.zero_grad();
    benchmark::DoNotOptimize(deeponet_objective(m, xi, coords, t, true));
  }
}
BENCHMARK(BM_DeepONetStep)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
