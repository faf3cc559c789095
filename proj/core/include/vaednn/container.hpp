/**
 * @file container.hpp
 * @brief On-disk array container shared by datasets, KLE bases and checkpoints.
 *
 * Layout: a directory holding `manifest.json` (format tag, version, kind,
 * element type, endianness, fingerprint, per-array shape/file/checksum and a
 * free-form metadata record) plus one raw little-endian float32 file per
 * named array.
 */
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaednn/ndarray.hpp"

namespace vaednn {

inline constexpr int kContainerVersion = 1;
inline constexpr const char* kContainerFormat = "vaednn-container";
inline constexpr const char* kManifestName = "manifest.json";

struct NamedArray {
  Shape shape;
  std::vector<float> values;
};

struct Container {
  std::string kind;
  std::string fingerprint;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, NamedArray> arrays;

  void put(const std::string& name, Shape shape, std::vector<float> values);
  template <class T>
  void put(const std::string& name, const NdArray<T>& a) {
    put(name, a.shape(), std::vector<float>(a.values().begin(), a.values().end()));
  }
  bool has(const std::string& name) const { return arrays.count(name) != 0; }
  const NamedArray& at(const std::string& name) const;
  template <class T = float>
  NdArray<T> get(const std::string& name) const {
    const auto& a = at(name);
    return NdArray<T>(a.shape, std::vector<T>(a.values.begin(), a.values.end()));
  }
};

/// Writes the container; the manifest is written last so a partially
/// written directory never loads.
void save_container(const std::filesystem::path& dir, const Container& c);

/// Throws version-mismatch, corrupt-container, or missing-checkpoint when the
/// directory has no manifest.
Container load_container(const std::filesystem::path& dir);

/// Reads only the manifest JSON.
nlohmann::json read_manifest(const std::filesystem::path& dir);

bool container_exists(const std::filesystem::path& dir);

}  // namespace vaednn
