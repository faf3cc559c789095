#include "vaednn/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vaednn/hash.hpp"

namespace vaednn {

namespace fs = std::filesystem;

namespace {

std::string file_name_for(const std::string& name) {
  std::string f = name;
  for (char& ch : f)
    if (ch == '/' || ch == '\\' || ch == ':') ch = '_';
  return f + ".f32";
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::vector<char> encode(const std::vector<float>& values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(bytes.data() + 4 * i, &u, 4);
  }
  return bytes;
}

std::vector<float> decode(const std::vector<char>& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    values[i] = std::bit_cast<float>(to_little(u));
  }
  return values;
}

}  // namespace

void Container::put(const std::string& name, Shape shape, std::vector<float> values) {
  if (shape_size(shape) != values.size()) {
    throw Error(ErrorKind::shape_mismatch, "array '" + name + "' data does not match shape " + shape_string(shape));
  }
  arrays[name] = NamedArray{std::move(shape), std::move(values)};
}

const NamedArray& Container::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw Error(ErrorKind::corrupt_container, "container has no array '" + name + "'");
  return it->second;
}

bool container_exists(const fs::path& dir) { return fs::exists(dir / kManifestName); }

void save_container(const fs::path& dir, const Container& c) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::unwritable_directory, dir.string());

  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& [name, a] : c.arrays) {
    const auto bytes = encode(a.values);
    const auto file = file_name_for(name);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::unwritable_directory, (dir / file).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io_error, "short write to " + (dir / file).string());
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    arrays[name] = {{"shape", a.shape}, {"file", file}, {"checksum", h.hex()}};
  }
  nlohmann::json manifest = {{"format", kContainerFormat},
                             {"version", kContainerVersion},
                             {"kind", c.kind},
                             {"dtype", "float32"},
                             {"endianness", "little"},
                             {"fingerprint", c.fingerprint},
                             {"arrays", arrays},
                             {"metadata", c.metadata}};
  const auto tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::unwritable_directory, tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, dir / kManifestName, ec);
  if (ec) throw Error(ErrorKind::io_error, "cannot finalize manifest in " + dir.string());
}

nlohmann::json read_manifest(const fs::path& dir) {
  const auto path = dir / kManifestName;
  if (!fs::exists(path)) throw Error(ErrorKind::missing_checkpoint, "no container at " + dir.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::corrupt_container, path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kContainerFormat) throw Error(ErrorKind::corrupt_container, path.string() + ": not a container");
  if (j.value("version", -1) != kContainerVersion) {
    throw Error(ErrorKind::version_mismatch, path.string() + ": version " + std::to_string(j.value("version", -1)) +
                                                 ", expected " + std::to_string(kContainerVersion));
  }
  return j;
}

Container load_container(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  if (manifest.value("dtype", "") != "float32" || manifest.value("endianness", "") != "little") {
    throw Error(ErrorKind::corrupt_container, dir.string() + ": unsupported element type");
  }
  Container c;
  c.kind = manifest.value("kind", "");
  c.fingerprint = manifest.value("fingerprint", "");
  c.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& [name, entry] : manifest.at("arrays").items()) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::corrupt_container, "missing array file " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != shape_size(shape) * 4) {
      throw Error(ErrorKind::corrupt_container, path.string() + ": size does not match shape " + shape_string(shape));
    }
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    if (h.hex() != entry.value("checksum", "")) throw Error(ErrorKind::corrupt_container, path.string() + ": checksum mismatch");
    c.arrays[name] = NamedArray{shape, decode(bytes)};
  }
  return c;
}

}  // namespace vaednn
