#pragma once

#include <string>
#include <vector>

#include "vaednn/container.hpp"
#include "vaednn/nn/layers.hpp"

namespace vaednn::nn {

/// Stores parameters as "<prefix>.<index>.<name>" float32 arrays.
template <class T>
void store_parameters(Container& c, const std::string& prefix, const std::vector<Parameter<T>*>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i]->value;
    std::vector<float> data(static_cast<std::size_t>(v.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k) data[static_cast<std::size_t>(k)] = static_cast<float>(v.data()[k]);
    c.put(prefix + "." + std::to_string(i) + "." + params[i]->name,
          {static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(v.cols())}, std::move(data));
  }
}

/// Throws missing-checkpoint or shape-mismatch when the container does not
/// hold exactly the expected arrays.
template <class T>
void restore_parameters(const Container& c, const std::string& prefix, const std::vector<Parameter<T>*>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string key = prefix + "." + std::to_string(i) + "." + params[i]->name;
    if (!c.has(key)) throw Error(ErrorKind::missing_checkpoint, "array '" + key + "' not in checkpoint");
    const auto& a = c.at(key);
    auto& v = params[i]->value;
    if (a.shape.size() != 2 || a.shape[0] != static_cast<std::size_t>(v.rows()) ||
        a.shape[1] != static_cast<std::size_t>(v.cols())) {
      throw Error(ErrorKind::shape_mismatch, "array '" + key + "' has shape " + shape_string(a.shape));
    }
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<T>(a.values[static_cast<std::size_t>(k)]);
    params[i]->zero_grad();
  }
}

}  // namespace vaednn::nn

#include "vaednn/hash.hpp"

namespace vaednn::nn {

/// Hash of the float32 image of every parameter plus `salt` (typically the
/// serialized config). Identical before saving and after loading.
template <class T>
std::string parameter_fingerprint(const std::vector<Parameter<T>*>& params, const std::string& salt) {
  Fnv1a h;
  h.update(salt);
  for (const auto* p : params) {
    h.update(p->name);
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      const float v = static_cast<float>(p->value.data()[k]);
      h.update(&v, sizeof v);
    }
  }
  return h.hex();
}

}  // namespace vaednn::nn
