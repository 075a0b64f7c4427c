#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fshgr/errors.hpp"

namespace fshgr::io {

// All on-disk formats are little-endian.

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  write_bytes(out, buf, sizeof(T));
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline void write_f32(std::ostream& out, float v) { write_le(out, v); }
inline void write_f64(std::ostream& out, double v) { write_le(out, v); }

template <typename T>
T read_le(std::istream& in, const std::string& context) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) {
    const auto pos = static_cast<std::int64_t>(in.tellg());
    throw FormatError(context + ": truncated while reading " + std::to_string(sizeof(T)) +
                          " bytes",
                      static_cast<std::uint64_t>(pos < 0 ? 0 : pos));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline std::uint32_t read_u32(std::istream& in, const std::string& context) {
  return read_le<std::uint32_t>(in, context);
}
inline std::uint64_t read_u64(std::istream& in, const std::string& context) {
  return read_le<std::uint64_t>(in, context);
}
inline float read_f32(std::istream& in, const std::string& context) {
  return read_le<float>(in, context);
}
inline double read_f64(std::istream& in, const std::string& context) {
  return read_le<double>(in, context);
}

inline void write_f32_array(std::ostream& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(out, data, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f32(out, data[i]);
  }
}

inline void read_f32_array(std::istream& in, float* data, std::size_t n,
                           const std::string& context, std::uint64_t payload_offset) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  const auto got = static_cast<std::uint64_t>(in.gcount());
  if (got != n * sizeof(float))
    throw FormatError(context + ": truncated payload, expected " +
                          std::to_string(n * sizeof(float)) + " bytes, got " +
                          std::to_string(got),
                      payload_offset + got);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < n; ++i) {
      auto* b = reinterpret_cast<unsigned char*>(data + i);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
  }
}

}  // namespace fshgr::io
