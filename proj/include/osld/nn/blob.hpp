#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "osld/errors.hpp"

namespace osld::nn {

// Parameter blobs are raw little-endian float32, one tensor per file.
// FNV-1a over the bytes guards against truncation and bit rot.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
std::uint64_t write_f32_blob(const std::filesystem::path& path, const std::vector<T>& values) {
  std::vector<float> buf(values.begin(), values.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write tensor blob " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw data_error("short write to tensor blob " + path.string());
  return fnv1a(buf.data(), buf.size() * sizeof(float));
}

template <typename T>
void read_f32_blob(const std::filesystem::path& path, std::size_t expected_count,
                   std::vector<T>& out, std::uint64_t expected_checksum = 0,
                   bool check = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("missing tensor blob " + path.string());
  std::vector<float> buf(expected_count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(expected_count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(expected_count * sizeof(float)))
    throw data_error("truncated tensor blob " + path.string());
  char extra;
  if (in.read(&extra, 1))
    throw data_error("tensor blob " + path.string() + " is larger than its manifest shape");
  if (check && fnv1a(buf.data(), buf.size() * sizeof(float)) != expected_checksum)
    throw data_error("checksum mismatch for tensor blob " + path.string());
  out.assign(buf.begin(), buf.end());
}

}  // namespace osld::nn
