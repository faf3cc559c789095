#include "vaednn/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "vaednn/container.hpp"
#include "vaednn/hash.hpp"

namespace vaednn {

Field2D Dataset::y_field(std::size_t i) const {
  const auto s = y.slice(i);
  return Field2D({y.dim(1), y.dim(2)}, std::vector<double>(s.begin(), s.end()));
}

StateField Dataset::h_field(std::size_t i) const {
  const auto s = h.slice(i);
  return StateField({h.dim(1), h.dim(2), h.dim(3)}, std::vector<double>(s.begin(), s.end()));
}

Dataset generate_dataset(const Domain& domain, const CovarianceModel& cov, const SolverConfig& solver, std::size_t n,
                         std::uint64_t base_seed, int threads, const ProgressFn& progress) {
  if (n < 1) throw Error(ErrorKind::insufficient_samples, "dataset size must be >= 1");
  const auto n1 = static_cast<std::size_t>(domain.grid.n_x1), n2 = static_cast<std::size_t>(domain.grid.n_x2);
  const std::size_t nt = domain.schedule.periods.size() - 1;
  Dataset ds;
  ds.y = NdArray<float>({n, n1, n2});
  ds.h = NdArray<float>({n, nt, n1, n2});
  ds.seeds.resize(n);
  ds.domain_fingerprint = domain.fingerprint();
  const LogConductivitySampler sampler(domain, cov);

  std::atomic<std::size_t> next{0}, done{0};
  std::mutex mu;
  std::vector<std::string> failures;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const std::uint64_t seed = base_seed + i;
      ds.seeds[i] = seed;
      try {
        const auto pair = simulate_pair(domain, sampler, seed, solver);
        std::copy(pair.y.values().begin(), pair.y.values().end(), ds.y.slice(i).begin());
        std::copy(pair.h.values().begin(), pair.h.values().end(), ds.h.slice(i).begin());
      } catch (const Error& e) {
        std::lock_guard lock(mu);
        failures.push_back(e.detail());
      }
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(mu);
        progress(d, n);
      }
    }
  };
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::string msg = std::to_string(failures.size()) + " sample(s) failed: " + failures.front();
    for (std::size_t k = 1; k < std::min<std::size_t>(failures.size(), 5); ++k) msg += "; " + failures[k];
    throw Error(ErrorKind::no_convergence, msg);
  }
  return ds;
}

DatasetSplit split_dataset(std::size_t n, double train_fraction, double validation_fraction) {
  if (!(train_fraction > 0 && validation_fraction >= 0 && train_fraction + validation_fraction <= 1)) {
    throw Error(ErrorKind::invalid_config, "invalid split fractions");
  }
  DatasetSplit s;
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) s.train.push_back(i);
    else if (i < n_train + n_val) s.validation.push_back(i);
    else s.test.push_back(i);
  }
  return s;
}

namespace {

void stats_over(const NdArray<float>& batch, std::span<const std::size_t> idx, const ActiveMask& mask,
                NdArray<double>& mean, NdArray<double>& stdev) {
  const std::size_t block = batch.size() / batch.dim(0);
  const std::size_t cells = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  mean = NdArray<double>(shape, 0.0);
  stdev = NdArray<double>(shape, 0.0);
  std::vector<double> m2(block, 0.0);
  // Welford per element keeps this stable for large offsets such as heads.
  double count = 0.0;
  for (std::size_t s : idx) {
    count += 1.0;
    const auto v = batch.slice(s);
    for (std::size_t e = 0; e < block; ++e) {
      if (!mask.flat_active(e % cells)) continue;
      const double x = v[e];
      const double d = x - mean[e];
      mean[e] += d / count;
      m2[e] += d * (x - mean[e]);
    }
  }
  for (std::size_t e = 0; e < block; ++e) {
    if (mask.flat_active(e % cells)) stdev[e] = std::sqrt(std::max(m2[e], 0.0) / (count - 1.0));
  }
}

template <class T>
std::size_t per_sample_check(const NdArray<T>& x, const NdArray<double>& mean, const NdArray<double>& stdev,
                             const ActiveMask& mask) {
  if (mean.shape() != stdev.shape()) throw Error(ErrorKind::shape_mismatch, "mean/std shapes differ");
  const auto& ms = mean.shape();
  const auto& xs = x.shape();
  const bool single = xs == ms;
  const bool batch = xs.size() == ms.size() + 1 && std::equal(ms.begin(), ms.end(), xs.begin() + 1);
  if (!single && !batch) {
    throw Error(ErrorKind::shape_mismatch, "array " + shape_string(xs) + " does not match stats " + shape_string(ms));
  }
  if (mean.size() % static_cast<std::size_t>(mask.n_x1() * mask.n_x2()) != 0) {
    throw Error(ErrorKind::shape_mismatch, "stats do not match the mask grid");
  }
  return mean.size();
}

}  // namespace

NormStats compute_norm_stats(const Dataset& ds, const ActiveMask& mask, std::span<const std::size_t> indices) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  if (indices.size() < 2) throw Error(ErrorKind::insufficient_samples, "normalization needs at least 2 samples");
  NormStats s;
  stats_over(ds.y, indices, mask, s.y_mean, s.y_std);
  stats_over(ds.h, indices, mask, s.h_mean, s.h_std);
  s.count = indices.size();
  s.dataset_fingerprint = dataset_fingerprint(ds);
  return s;
}

std::string dataset_fingerprint(const Dataset& ds) {
  Fnv1a h;
  h.update(ds.domain_fingerprint);
  h.update(std::span<const std::uint64_t>(ds.seeds));
  h.update(ds.y.span());
  h.update(ds.h.span());
  return h.hex();
}

std::string norm_stats_fingerprint(const NormStats& s) {
  Fnv1a h;
  h.update(s.dataset_fingerprint);
  for (const auto* a : {&s.y_mean, &s.y_std, &s.h_mean, &s.h_std}) h.update(a->span());
  const auto n = static_cast<std::uint64_t>(s.count);
  h.update(&n, sizeof n);
  return h.hex();
}

template <class T>
NdArray<T> normalize(const NdArray<T>& x, const NdArray<double>& mean, const NdArray<double>& stdev,
                     const ActiveMask& mask) {
  const std::size_t block = per_sample_check(x, mean, stdev, mask);
  const std::size_t cells = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  NdArray<T> out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t e = k % block;
    if (!mask.flat_active(e % cells) || !(stdev[e] > kStdFloor)) continue;
    out[k] = static_cast<T>((static_cast<double>(x[k]) - mean[e]) / stdev[e]);
  }
  return out;
}

template <class T>
NdArray<T> denormalize(const NdArray<T>& x, const NdArray<double>& mean, const NdArray<double>& stdev,
                       const ActiveMask& mask) {
  const std::size_t block = per_sample_check(x, mean, stdev, mask);
  const std::size_t cells = static_cast<std::size_t>(mask.n_x1() * mask.n_x2());
  NdArray<T> out(x.shape(), static_cast<T>(kInactiveSentinel));
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t e = k % block;
    if (!mask.flat_active(e % cells)) continue;
    const double sd = stdev[e] > kStdFloor ? stdev[e] : 0.0;
    out[k] = static_cast<T>(static_cast<double>(x[k]) * sd + mean[e]);
  }
  return out;
}

template <class T>
NdArray<T> take(const NdArray<T>& batch, std::span<const std::size_t> indices) {
  Shape shape = batch.shape();
  shape[0] = indices.size();
  NdArray<T> out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = batch.slice(indices[k]);
    std::copy(src.begin(), src.end(), out.slice(k).begin());
  }
  return out;
}

template NdArray<float> normalize(const NdArray<float>&, const NdArray<double>&, const NdArray<double>&, const ActiveMask&);
template NdArray<double> normalize(const NdArray<double>&, const NdArray<double>&, const NdArray<double>&, const ActiveMask&);
template NdArray<float> denormalize(const NdArray<float>&, const NdArray<double>&, const NdArray<double>&, const ActiveMask&);
template NdArray<double> denormalize(const NdArray<double>&, const NdArray<double>&, const NdArray<double>&, const ActiveMask&);
template NdArray<float> take(const NdArray<float>&, std::span<const std::size_t>);
template NdArray<double> take(const NdArray<double>&, std::span<const std::size_t>);

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  Container c;
  c.kind = "dataset";
  c.fingerprint = ds.domain_fingerprint;
  c.metadata = {{"seeds", ds.seeds}, {"n", ds.size()}};
  c.put("Y", ds.y);
  c.put("H", ds.h);
  save_container(dir, c);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& expected_fingerprint) {
  const auto c = load_container(dir);
  if (c.kind != "dataset") throw Error(ErrorKind::corrupt_container, dir.string() + " is not a dataset container");
  if (!expected_fingerprint.empty() && c.fingerprint != expected_fingerprint) {
    throw Error(ErrorKind::fingerprint_mismatch, "dataset was generated for domain " + c.fingerprint + ", expected " +
                                                     expected_fingerprint);
  }
  Dataset ds;
  ds.domain_fingerprint = c.fingerprint;
  ds.seeds = c.metadata.at("seeds").get<std::vector<std::uint64_t>>();
  ds.y = c.get<float>("Y");
  ds.h = c.get<float>("H");
  if (ds.y.dim(0) != ds.seeds.size() || ds.h.dim(0) != ds.seeds.size()) {
    throw Error(ErrorKind::corrupt_container, "dataset arrays disagree on sample count");
  }
  return ds;
}

void save_norm_stats(const std::filesystem::path& dir, const NormStats& s) {
  Container c;
  c.kind = "norm_stats";
  c.fingerprint = norm_stats_fingerprint(s);
  c.metadata = {{"count", s.count}, {"dataset_fingerprint", s.dataset_fingerprint}};
  // float32 storage would perturb the statistics; keep the exact doubles in
  // the metadata record as well so models see identical stats after reload.
  c.metadata["y_mean"] = s.y_mean.values();
  c.metadata["y_std"] = s.y_std.values();
  c.metadata["h_mean"] = s.h_mean.values();
  c.metadata["h_std"] = s.h_std.values();
  c.put("y_mean", s.y_mean);
  c.put("y_std", s.y_std);
  c.put("h_mean", s.h_mean);
  c.put("h_std", s.h_std);
  save_container(dir, c);
}

NormStats load_norm_stats(const std::filesystem::path& dir) {
  const auto c = load_container(dir);
  if (c.kind != "norm_stats") throw Error(ErrorKind::corrupt_container, dir.string() + " is not a norm-stats container");
  NormStats s;
  s.count = c.metadata.at("count").get<std::size_t>();
  s.dataset_fingerprint = c.metadata.value("dataset_fingerprint", std::string());
  auto exact = [&](const char* name) {
    return NdArray<double>(c.at(name).shape, c.metadata.at(name).get<std::vector<double>>());
  };
  s.y_mean = exact("y_mean");
  s.y_std = exact("y_std");
  s.h_mean = exact("h_mean");
  s.h_std = exact("h_std");
  if (norm_stats_fingerprint(s) != c.fingerprint) {
    throw Error(ErrorKind::corrupt_container, "normalization statistics in " + dir.string() + " fail their checksum");
  }
  return s;
}

}  // namespace vaednn
