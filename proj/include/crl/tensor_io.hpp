#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "crl/tensor.hpp"

// Binary tensor container ("CRTF"):
//   magic "CRTF" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank
//   rank x u32 little-endian extents | row-major elements, little-endian.
// The library computes in f64 and writes f64 by default; f32 files are
// readable (widened on load) for compactness when produced elsewhere.

namespace crl {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

namespace io_detail {

inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
               static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 8);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
  int c = is.get();
  CRL_CHECK(c != EOF, "tensor read: truncated file while reading " << what);
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  CRL_CHECK(is.gcount() == 4, "tensor read: truncated file while reading " << what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  CRL_CHECK(is.gcount() == 8, "tensor read: truncated file while reading " << what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace io_detail

inline void write_tensor(std::ostream& os, const Tensor& t, Dtype dtype = Dtype::F64) {
  os.write("CRTF", 4);
  io_detail::put_u8(os, 1);  // version
  io_detail::put_u8(os, static_cast<std::uint8_t>(dtype));
  CRL_CHECK(t.rank() <= 255, "write_tensor: rank " << t.rank() << " exceeds format limit");
  io_detail::put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    io_detail::put_u32(os, static_cast<std::uint32_t>(t.extent(i)));
  if (dtype == Dtype::F64) {
    for (std::size_t i = 0; i < t.size(); ++i)
      io_detail::put_u64(os, std::bit_cast<std::uint64_t>(t[i]));
  } else {
    for (std::size_t i = 0; i < t.size(); ++i)
      io_detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
  }
  CRL_CHECK(os.good(), "write_tensor: stream write failed");
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  CRL_CHECK(is.gcount() == 4 && std::memcmp(magic, "CRTF", 4) == 0,
            "tensor read: not a CRTF tensor stream (bad magic)");
  std::uint8_t version = io_detail::get_u8(is, "version");
  CRL_CHECK(version == 1, "tensor read: unsupported version " << int(version));
  std::uint8_t dtype = io_detail::get_u8(is, "dtype");
  CRL_CHECK(dtype <= 1, "tensor read: unknown dtype code " << int(dtype));
  std::uint8_t rank = io_detail::get_u8(is, "rank");
  std::vector<int> shape(rank);
  for (int i = 0; i < rank; ++i) {
    std::uint32_t e = io_detail::get_u32(is, "extent");
    CRL_CHECK(e > 0 && e <= 0x7fffffffu, "tensor read: bad extent " << e);
    shape[static_cast<std::size_t>(i)] = static_cast<int>(e);
  }
  Tensor t(std::move(shape));
  if (dtype == static_cast<std::uint8_t>(Dtype::F64)) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = std::bit_cast<double>(io_detail::get_u64(is, "element"));
  } else {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(std::bit_cast<float>(io_detail::get_u32(is, "element")));
  }
  return t;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t,
                        Dtype dtype = Dtype::F64) {
  std::ofstream os(path, std::ios::binary);
  CRL_CHECK(os, "save_tensor: cannot open " << path.string() << " for writing");
  write_tensor(os, t, dtype);
  os.close();
  CRL_CHECK(os.good(), "save_tensor: write to " << path.string() << " failed");
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  CRL_CHECK(is, "load_tensor: cannot open " << path.string());
  return read_tensor(is);
}

}  // namespace crl
