/**
 * @file training.hpp
 * @brief Shared mini-batch training plumbing: config, per-epoch history and
 *        the divergence exception that carries the history so far.
 */
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/error.hpp"
#include "vaednn/nn/optim.hpp"

namespace vaednn {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  ///< NaN when no validation split was given
  double seconds = 0.0;
  nlohmann::json parts = nlohmann::json::object();  ///< loss components, model specific
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const TrainHistory& h);
void from_json(const nlohmann::json& j, TrainHistory& h);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Called after every epoch; return false to stop early.
  std::function<bool(const EpochRecord&)> on_epoch;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep `defaults`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults);

/// Non-finite loss during training; history() holds the completed epochs.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, TrainHistory history)
      : Error(ErrorKind::divergence, message), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

/// Shuffled mini-batch index lists for one epoch; the last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng,
                                                   bool shuffle = true);

/// Mini-batch Adam loop shared by the surrogate trainers. `step(indices)`
/// evaluates one batch, accumulates gradients and returns its loss;
/// `validate()` returns the validation loss or NaN.
template <class T, class Step, class Validate>
TrainHistory run_minibatch_training(std::size_t n, const TrainConfig& cfg, const std::vector<nn::Parameter<T>*>& params,
                                    Step&& step, Validate&& validate, const std::string& what) {
  using clock = std::chrono::steady_clock;
  std::mt19937_64 rng(cfg.seed);
  nn::Adam<T> opt(params, cfg.learning_rate);
  TrainHistory history;
  const auto t_start = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t_start).count(); };
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    double sum = 0;
    for (const auto& idx : make_batches(n, cfg.batch_size, rng)) {
      opt.zero_grad();
      const double loss = step(idx);
      if (!std::isfinite(loss)) {
        history.seconds = elapsed();
        throw DivergenceError("non-finite " + what + " loss at epoch " + std::to_string(epoch), history);
      }
      opt.step();
      sum += loss * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(n);
    rec.validation_loss = validate();
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (cfg.on_epoch && !cfg.on_epoch(rec)) break;
  }
  history.seconds = elapsed();
  return history;
}

}  // namespace vaednn
