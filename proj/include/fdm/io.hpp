#ifndef FDM_IO_HPP
#define FDM_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/tensor.hpp"

// FDMT v1 tensor container (little-endian):
//   magic "FDMT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u16 reserved=0 |
//   u32 rank | rank x u32 dims | raw scalars, row-major.
// Readers reject bad magic, version != 1, unknown dtype, or length mismatch.

namespace fdm {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

struct FdmtBuffer {
  DType dtype = DType::F32;
  std::vector<uint32_t> dims;
  std::vector<double> values;  // widened on read; narrowed on typed access

  int64_t numel() const {
    int64_t p = 1;
    for (uint32_t d : dims) p *= d;
    return p;
  }
};

inline std::string fdmt_encode(DType dtype, const std::vector<uint32_t>& dims,
                               const void* scalars, size_t scalar_bytes) {
  std::string out;
  out.reserve(12 + dims.size() * 4 + scalar_bytes);
  out += "FDMT";
  out.push_back(1);  // version
  out.push_back(static_cast<char>(dtype));
  detail::put_u16(out, 0);  // reserved
  detail::put_u32(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) detail::put_u32(out, d);
  out.append(reinterpret_cast<const char*>(scalars), scalar_bytes);
  return out;
}

template <typename T>
std::string fdmt_encode_tensor(const Tensor<T>& t) {
  const Shape& s = t.shape();
  std::vector<uint32_t> dims = {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                                static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)};
  return fdmt_encode(Tensor<T>::dtype(), dims, t.data(),
                     static_cast<size_t>(t.numel()) * sizeof(T));
}

template <typename T>
void fdmt_write(const std::string& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  std::string bytes = fdmt_encode_tensor(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

inline void fdmt_write_vector(const std::string& path, const std::vector<float>& v) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  std::vector<uint32_t> dims = {static_cast<uint32_t>(v.size())};
  std::string bytes = fdmt_encode(DType::F32, dims, v.data(), v.size() * sizeof(float));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

inline FdmtBuffer fdmt_decode(const std::string& bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  size_t len = bytes.size();
  if (len < 12 || std::memcmp(p, "FDMT", 4) != 0)
    throw IoError(origin + ": bad magic, not an FDMT file");
  uint8_t version = p[4];
  if (version != 1) throw IoError(origin + ": unsupported FDMT version " + std::to_string(version));
  uint8_t dtype_byte = p[5];
  if (dtype_byte > 1) throw IoError(origin + ": unknown dtype code " + std::to_string(dtype_byte));
  uint32_t rank = detail::get_u32(p + 8);
  if (rank > 8) throw IoError(origin + ": implausible rank " + std::to_string(rank));
  size_t header = 12 + static_cast<size_t>(rank) * 4;
  if (len < header) throw IoError(origin + ": truncated header");

  FdmtBuffer buf;
  buf.dtype = static_cast<DType>(dtype_byte);
  buf.dims.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) buf.dims[i] = detail::get_u32(p + 12 + 4 * i);

  size_t scalar_size = buf.dtype == DType::F32 ? 4 : 8;
  size_t expected = header + static_cast<size_t>(buf.numel()) * scalar_size;
  if (len != expected)
    throw IoError(origin + ": length mismatch, expected " + std::to_string(expected) +
                  " bytes, got " + std::to_string(len));

  buf.values.resize(static_cast<size_t>(buf.numel()));
  if (buf.dtype == DType::F32) {
    for (size_t i = 0; i < buf.values.size(); ++i) {
      float v;
      std::memcpy(&v, p + header + i * 4, 4);
      buf.values[i] = v;
    }
  } else {
    std::memcpy(buf.values.data(), p + header, buf.values.size() * 8);
  }
  return buf;
}

inline FdmtBuffer fdmt_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fdmt_decode(bytes, path);
}

// Reads a rank-4 FDMT file as a tensor, converting scalars to T if needed.
template <typename T>
Tensor<T> fdmt_read_tensor(const std::string& path) {
  FdmtBuffer buf = fdmt_read(path);
  if (buf.dims.size() != 4)
    throw IoError(path + ": expected rank-4 tensor, got rank " +
                  std::to_string(buf.dims.size()));
  Shape s{static_cast<int64_t>(buf.dims[0]), static_cast<int64_t>(buf.dims[1]),
          static_cast<int64_t>(buf.dims[2]), static_cast<int64_t>(buf.dims[3])};
  Tensor<T> t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(buf.values[static_cast<size_t>(i)]);
  return t;
}

}  // namespace fdm

#endif  // FDM_IO_HPP
