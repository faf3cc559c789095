#include "vaednn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vaednn {

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"seconds", r.seconds}, {"parts", r.parts}};
  if (std::isfinite(r.validation_loss)) j["validation_loss"] = r.validation_loss;
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.validation_loss = j.contains("validation_loss") ? j.at("validation_loss").get<double>()
                                                    : std::numeric_limits<double>::quiet_NaN();
  r.seconds = j.value("seconds", 0.0);
  r.parts = j.value("parts", nlohmann::json::object());
}

void to_json(nlohmann::json& j, const TrainHistory& h) { j = {{"epochs", h.epochs}, {"seconds", h.seconds}}; }

void from_json(const nlohmann::json& j, TrainHistory& h) {
  h.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
  h.seconds = j.value("seconds", 0.0);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0) throw Error(ErrorKind::invalid_config, "epochs must be >= 0");
  if (c.batch_size < 1) throw Error(ErrorKind::invalid_config, "batch_size must be >= 1");
  if (!(c.learning_rate > 0)) throw Error(ErrorKind::invalid_config, "learning_rate must be > 0");
  return c;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t s = 0; s < n; s += bs) batches.emplace_back(order.begin() + s, order.begin() + std::min(n, s + bs));
  return batches;
}

}  // namespace vaednn
