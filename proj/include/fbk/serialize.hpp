#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "fbk/errors.hpp"
#include "fbk/tensor.hpp"

namespace fbk {

/// Flat binary tensor format used by checkpoints and dataset dumps:
///   magic "FBKT" | u8 element width in bytes (4 or 8) | u8 rank |
///   rank x little-endian u64 extents | payload, little-endian row-major.
namespace wire {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
  if constexpr (sizeof(T) == 4) {
    auto u = std::bit_cast<std::uint32_t>(v);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  } else {
    auto u = std::bit_cast<std::uint64_t>(v);
    put_u64_le(os, u);
  }
}

template <typename T>
T get_scalar_le(std::istream& is) {
  if constexpr (sizeof(T) == 4) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return std::bit_cast<T>(u);
  } else {
    return std::bit_cast<T>(get_u64_le(is));
  }
}

}  // namespace wire

template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("FBKT", 4);
  const unsigned char width = sizeof(T);
  const unsigned char rank = static_cast<unsigned char>(t.rank());
  os.put(static_cast<char>(width));
  os.put(static_cast<char>(rank));
  for (std::size_t e : t.shape()) wire::put_u64_le(os, e);
  for (std::size_t i = 0; i < t.numel(); ++i) wire::put_scalar_le(os, t[i]);
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  save_tensor(os, t);
  if (!os) throw io_error("short write to " + path);
}

template <typename T>
Tensor<T> load_tensor(std::istream& is, const std::string& name = "<stream>") {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FBKT", 4) != 0) {
    throw io_error(name + ": not a tensor file (bad magic)");
  }
  const int width = is.get();
  const int rank = is.get();
  if (width != sizeof(T)) {
    throw io_error(name + ": element width " + std::to_string(width) +
                   " does not match requested width " + std::to_string(sizeof(T)));
  }
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) e = static_cast<std::size_t>(wire::get_u64_le(is));
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = wire::get_scalar_le<T>(is);
  if (!is) throw io_error(name + ": truncated tensor payload");
  return t;
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  return load_tensor<T>(is, path);
}

}  // namespace fbk
