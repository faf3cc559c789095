#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace vaednn {

/// 64-bit FNV-1a; used for content fingerprints and container checksums.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  template <class T>
  void update(std::span<const T> values) noexcept {
    update(values.data(), values.size_bytes());
  }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fingerprint_of(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

}  // namespace vaednn
