#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace clipfit {

// FNV-1a 64-bit. Used to fingerprint inputs in run manifests; not
// cryptographic, just stable and dependency-free.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

// Hash of a file's raw bytes; throws IoError if unreadable.
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

// Fixed-width lowercase hex rendering used in manifests and run dir names.
std::string hex64(std::uint64_t v);

}  // namespace clipfit
