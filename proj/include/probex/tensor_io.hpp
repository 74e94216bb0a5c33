#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "probex/errors.hpp"
#include "probex/linalg.hpp"

namespace probex {

// Binary tensor file:
//   magic "WZT1" | u8 ndim | ndim x u32 little-endian dims | row-major f32 payload
// Values are stored single precision; everything in memory is double.
namespace wzt {

inline constexpr char kMagic[4] = {'W', 'Z', 'T', '1'};

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace wzt

inline void write_tensor(const std::string& path, const std::vector<std::uint32_t>& dims,
                         const double* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  os.write(wzt::kMagic, 4);
  const unsigned char ndim = static_cast<unsigned char>(dims.size());
  os.write(reinterpret_cast<const char*>(&ndim), 1);
  std::size_t total = 1;
  for (std::uint32_t d : dims) {
    wzt::write_u32_le(os, d);
    total *= d;
  }
  std::vector<float> payload(total);
  for (std::size_t i = 0; i < total; ++i) payload[i] = static_cast<float>(data[i]);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(total * sizeof(float)));
  if (!os) throw FormatError("short write: " + path);
}

struct TensorFile {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

inline TensorFile read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, wzt::kMagic, 4) != 0) {
    throw FormatError("bad magic in tensor file: " + path);
  }
  unsigned char ndim = 0;
  is.read(reinterpret_cast<char*>(&ndim), 1);
  if (!is) throw FormatError("truncated header: " + path);
  TensorFile t;
  std::size_t total = 1;
  for (unsigned i = 0; i < ndim; ++i) {
    const std::uint32_t d = wzt::read_u32_le(is);
    if (!is) throw FormatError("truncated dims: " + path);
    t.dims.push_back(d);
    total *= d;
  }
  std::vector<float> payload(total);
  is.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (static_cast<std::size_t>(is.gcount()) != total * sizeof(float)) {
    throw FormatError("truncated payload: " + path);
  }
  t.data.resize(total);
  for (std::size_t i = 0; i < total; ++i) t.data[i] = static_cast<double>(payload[i]);
  return t;
}

inline void write_matrix(const std::string& path, const Matrix& m) {
  write_tensor(path, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
               m.data.data());
}

inline Matrix read_matrix(const std::string& path) {
  TensorFile t = read_tensor(path);
  if (t.dims.size() != 2) {
    throw FormatError("expected 2-D tensor in " + path + ", got " +
                      std::to_string(t.dims.size()) + "-D");
  }
  Matrix m(t.dims[0], t.dims[1]);
  m.data = std::move(t.data);
  return m;
}

inline void write_tensor3(const std::string& path, const Tensor3& t) {
  write_tensor(path,
               {static_cast<std::uint32_t>(t.dim0), static_cast<std::uint32_t>(t.dim1),
                static_cast<std::uint32_t>(t.dim2)},
               t.data.data());
}

inline Tensor3 read_tensor3(const std::string& path) {
  TensorFile f = read_tensor(path);
  if (f.dims.size() != 3) {
    throw FormatError("expected 3-D tensor in " + path + ", got " +
                      std::to_string(f.dims.size()) + "-D");
  }
  Tensor3 t(f.dims[0], f.dims[1], f.dims[2]);
  t.data = std::move(f.data);
  return t;
}

inline void write_vector(const std::string& path, const Vec& v) {
  write_tensor(path, {static_cast<std::uint32_t>(v.size())}, v.data());
}

inline Vec read_vector(const std::string& path) {
  TensorFile t = read_tensor(path);
  if (t.dims.size() != 1) {
    throw FormatError("expected 1-D tensor in " + path + ", got " +
                      std::to_string(t.dims.size()) + "-D");
  }
  return t.data;
}

// Quantize to the stored precision; save/load round-trips are bit-exact on
// these values.
inline double to_stored(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace probex
