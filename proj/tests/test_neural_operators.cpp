#include <filesystem>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vaednn/neural_operators.hpp"

using namespace vaednn;
using vaednn::testing::fd_mismatch;
using vaednn::testing::Md;
using vaednn::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

constexpr int kN1 = 8, kN2 = 4;

std::vector<unsigned char> toy_cells() {
  std::vector<unsigned char> m(kN1 * kN2, 1);
  m[0] = m[5] = m[31] = 0;
  return m;
}

FnoConfig toy_fno() {
  FnoConfig c;
  c.n_x1 = kN1;
  c.n_x2 = kN2;
  c.width = 4;
  c.modes1 = 2;
  c.modes2 = 2;
  c.n_layers = 2;
  c.out_channels = 3;
  c.projection_hidden = 5;
  return c;
}

DeepONetConfig toy_deeponet() {
  DeepONetConfig c;
  c.n_xi = 4;
  c.branch_hidden = {8, 8};
  c.trunk_hidden = {8, 8};
  c.p = 5;
  c.n_t = 3;
  return c;
}

void perturb(std::vector<nn::Parameter<double>*> params, std::mt19937_64& rng) {
  for (auto* p : params) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.1);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vaednn_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("default FNO configuration") {
  Fno<float> m(FnoConfig{}, build_freyberg_domain().mask.values());
  CHECK(m.config().n_layers == 4);
  CHECK(m.config().width == 128);
  CHECK(m.config().modes1 == 8);
  CHECK(m.config().modes2 == 8);
  CHECK(m.config().modes1 <= 40 / 2);
  CHECK(m.config().modes2 <= 20 / 2);
  for (int k = 0; k < 4; ++k) CHECK_NOTHROW(m.fourier_layer(k));
  CHECK_THROWS_AS(m.fourier_layer(4), Error);
  std::size_t sum = 0;
  for (auto* p : m.parameters()) sum += static_cast<std::size_t>(p->value.size());
  CHECK(m.parameter_count() == sum);
  MESSAGE("FNO parameters: " << m.parameter_count());
}

TEST_CASE("default DeepONet configuration and parameter count") {
  DeepONet<float> m{DeepONetConfig{}};
  CHECK(m.config().branch_hidden == std::vector<int>(4, 1200));
  CHECK(m.config().trunk_hidden == std::vector<int>(4, 300));
  CHECK(m.config().p == 90);
  const std::size_t branch = (150 * 1200 + 1200) + 3 * (1200 * 1200 + 1200) + (1200 * 90 + 90);
  const std::size_t trunk = (3 * 300 + 300) + 3 * (300 * 300 + 300) + (300 * 90 + 90);
  CHECK(m.parameter_count() == branch + trunk + 1);
}

TEST_CASE("config JSON round trips") {
  nlohmann::json a = toy_fno(), b = toy_deeponet();
  CHECK(a.get<FnoConfig>() == toy_fno());
  CHECK(b.get<DeepONetConfig>() == toy_deeponet());
  CHECK(nlohmann::json::object().get<FnoConfig>() == FnoConfig{});
}

TEST_CASE("FNO objective gradients match finite differences") {
  Fno<double> m(toy_fno(), toy_cells());
  m.initialize(5);
  std::mt19937_64 rng(6);
  perturb(m.parameters(), rng);
  Md y = random_matrix(2, kN1 * kN2, rng), h = random_matrix(2, 3 * kN1 * kN2, rng);
  m.zero_grad();
  Md dy;
  fno_objective(m, y, h, true, &dy);
  auto f = [&] { return fno_objective(m, y, h, false); };
  for (int c = 0; c < kN1 * kN2; ++c) {
    if (!toy_cells()[static_cast<std::size_t>(c)]) CHECK(dy(0, c) == 0.0);
  }
  CHECK(fd_mismatch(f, y, dy, 1e-5, 64) < 1e-4);
  for (auto* p : m.parameters()) {
    const Md g = p->grad;
    CAPTURE(p->name);
    CHECK(fd_mismatch(f, p->value, g, 1e-5, 30) < 1e-4);
  }
}

TEST_CASE("FNO is deterministic and blind to inactive cells") {
  Fno<double> m(toy_fno(), toy_cells());
  m.initialize(7);
  std::mt19937_64 rng(8);
  Md y = random_matrix(3, kN1 * kN2, rng), h = random_matrix(3, 3 * kN1 * kN2, rng);
  const Md out = m.forward(y);
  CHECK(m.forward(y) == out);
  CHECK(out.allFinite());
  const double loss = fno_objective(m, y, h, false);
  y(1, 0) += 5.0;
  y(2, 31) -= 3.0;
  h(0, 5) = 100.0;             // inactive target in channel 0
  h(1, 2 * kN1 * kN2 + 31) = -7.0;  // inactive target in channel 2
  CHECK(m.forward(y) == out);
  CHECK(fno_objective(m, y, h, false) == loss);
}

TEST_CASE("DeepONet objective gradients match finite differences") {
  DeepONet<double> m(toy_deeponet());
  m.initialize(9);
  std::mt19937_64 rng(10);
  perturb(m.parameters(), rng);
  Md xi = random_matrix(3, 4, rng);
  const ActiveMask mask(kN1, kN2, toy_cells());
  const Md coords = deeponet_coordinates(mask, 3).cast<double>();
  const Md target = random_matrix(3, coords.rows(), rng);
  m.zero_grad();
  Md dxi;
  deeponet_objective(m, xi, coords, target, true, &dxi);
  auto f = [&] { return deeponet_objective(m, xi, coords, target, false); };
  CHECK(fd_mismatch(f, xi, dxi) < 1e-4);
  for (auto* p : m.parameters()) {
    const Md g = p->grad;
    CAPTURE(p->name);
    CHECK(fd_mismatch(f, p->value, g, 1e-5, 30) < 1e-4);
  }
}

TEST_CASE("DeepONet with p = 1 is a product of two scalars plus a bias") {
  DeepONetConfig c = toy_deeponet();
  c.p = 1;
  DeepONet<double> m(c);
  m.initialize(2);
  m.bias().value(0, 0) = 0.25;
  std::mt19937_64 rng(1);
  const Md xi = random_matrix(2, 4, rng), coords = random_matrix(6, 3, rng);
  const Md out = m.forward(xi, coords);
  const Md b = m.branch().forward(xi), t = m.trunk().forward(coords);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 6; ++k) CHECK(out(i, k) == doctest::Approx(b(i, 0) * t(k, 0) + 0.25).epsilon(1e-14));
}

TEST_CASE("DeepONet output is linear in the branch output") {
  DeepONet<double> m(toy_deeponet());
  m.initialize(4);
  m.bias().value(0, 0) = -0.3;
  std::mt19937_64 rng(2);
  const Md xi = random_matrix(2, 4, rng), coords = random_matrix(7, 3, rng);
  const Md base = m.forward(xi, coords).array() + 0.3;
  auto params = m.branch().parameters();  // the last Dense layer is the branch output
  const double c = 2.5;
  params[params.size() - 2]->value *= c;
  params[params.size() - 1]->value *= c;
  const Md scaled = m.forward(xi, coords).array() + 0.3;
  CHECK((scaled - c * base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("DeepONet coordinates and targets share one ordering") {
  const ActiveMask mask(kN1, kN2, toy_cells());
  const auto coords = deeponet_coordinates(mask, 3);
  const auto n_active = static_cast<Eigen::Index>(mask.active_count());
  REQUIRE(coords.rows() == 3 * n_active);
  CHECK(coords.minCoeff() >= 0.0f);
  CHECK(coords.maxCoeff() <= 1.0f);
  const int cell = mask.active_cells()[4];
  CHECK(coords(n_active * 2 + 4, 0) == doctest::Approx(static_cast<float>(cell / kN2) / (kN1 - 1)));
  CHECK(coords(n_active * 2 + 4, 1) == doctest::Approx(static_cast<float>(cell % kN2) / (kN2 - 1)));
  CHECK(coords(n_active * 2 + 4, 2) == 1.0f);

  NdArray<float> h({2, 3, kN1, kN2});
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = static_cast<float>(k);
  const auto tgt = deeponet_targets(h, mask);
  CHECK(tgt.rows() == 2);
  CHECK(tgt(1, n_active * 2 + 4) == h[1 * 3 * 32 + 2 * 32 + static_cast<std::size_t>(cell)]);

  const auto sel = deeponet_coordinates(mask, 3, {{2, cell}});
  CHECK(sel.row(0) == coords.row(n_active * 2 + 4));
}

TEST_CASE("KLE features equal kle_project") {
  const Domain d = build_freyberg_domain();
  std::vector<Field2D> ys;
  NdArray<float> raw({6, 40, 20});
  for (int s = 0; s < 6; ++s) {
    ys.push_back(sample_log_conductivity(d, CovarianceModel::two_scale(), static_cast<std::uint64_t>(s)));
    for (std::size_t c = 0; c < 800; ++c) raw[static_cast<std::size_t>(s) * 800 + c] = static_cast<float>(ys.back()[c]);
  }
  const KleBasis k = fit_kle(ys, d.mask, 0.05);
  const auto f = kle_features(k, raw, 3);
  REQUIRE(f.cols() == 3);
  Field2D y2({40, 20});
  for (std::size_t c = 0; c < 800; ++c) y2[c] = raw[2 * 800 + c];
  const Eigen::VectorXd xi = kle_project(k, y2, 3);
  for (int i = 0; i < 3; ++i) CHECK(f(2, i) == doctest::Approx(xi[i]).epsilon(1e-5));
  CHECK_THROWS_AS(kle_features(k, raw, 6), Error);  // only 5 nonzero modes
}

TEST_CASE("operator training lowers the loss") {
  std::mt19937_64 rng(12);
  std::normal_distribution<float> n(0, 1);
  OperatorData data{NdArray<float>({16, kN1, kN2}), NdArray<float>({16, 3, kN1, kN2})};
  for (std::size_t s = 0; s < 16; ++s)
    for (std::size_t c = 0; c < 32; ++c) {
      const float v = n(rng);
      data.y[s * 32 + c] = v;
      for (std::size_t t = 0; t < 3; ++t) data.h[(s * 3 + t) * 32 + c] = 0.5f * v * static_cast<float>(t + 1);
    }
  Fno<float> fno(toy_fno(), toy_cells());
  fno.initialize(3);
  const auto hf = train_fno(fno, data, &data, TrainConfig{40, 8, 1e-2, 1, {}});
  CHECK(hf.epochs.back().train_loss < 0.5 * hf.epochs.front().train_loss);

  DeepONet<float> don(toy_deeponet());
  don.initialize(3);
  const ActiveMask mask(kN1, kN2, toy_cells());
  const auto coords = deeponet_coordinates(mask, 3);
  DeepONetData dd{random_matrix(16, 4, rng).cast<float>(), {}};
  dd.target = (dd.xi.col(0) * coords.col(0).transpose()).array() + 0.2f;
  const auto hd = train_deeponet(don, coords, dd, nullptr, TrainConfig{60, 8, 1e-2, 1, {}});
  CHECK(hd.epochs.back().train_loss < 0.5 * hd.epochs.front().train_loss);
  CHECK(std::isnan(hd.epochs.back().validation_loss));
}

TEST_CASE("operator checkpoints round trip") {
  const fs::path dir = scratch("operators");
  Fno<float> fno(toy_fno(), toy_cells());
  fno.initialize(1);
  const std::string ff = save_fno(dir / "fno", fno, {}, {{"note", "x"}});
  auto lf = load_fno(dir / "fno", toy_cells());
  CHECK(lf.fingerprint == ff);
  CHECK(lf.metadata["note"] == "x");
  std::mt19937_64 rng(1);
  const nn::Matrix<float> y = random_matrix(1, 32, rng).cast<float>();
  CHECK(lf.model->forward(y) == fno.forward(y));

  DeepONet<float> don(toy_deeponet());
  don.initialize(2);
  save_deeponet(dir / "don", don, {}, {{"kle_fingerprint", "abc"}});
  auto ld = load_deeponet(dir / "don");
  CHECK(ld.model->parameter_count() == don.parameter_count());
  KleBasis basis;
  try {
    check_kle_fingerprint(ld, basis);
    FAIL("expected fingerprint-mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::fingerprint_mismatch);
  }
  try {
    load_fno(dir / "don", toy_cells());
    FAIL("expected corrupt-container");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::corrupt_container);
  }
  try {
    load_deeponet(dir / "absent");
    FAIL("expected missing-checkpoint");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::missing_checkpoint);
  }
  fs::remove_all(dir);
}
