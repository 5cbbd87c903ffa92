// Binary parameter checkpoints.
//
// Layout (all integers little-endian unsigned 32-bit, floats IEEE-754
// binary32 little-endian):
//
//   bytes 0..3   magic "CDRL"
//   u32          format version (currently 1)
//   u32          array count N
//   N times:
//     u32        name length L, then L bytes of UTF-8 name
//     u32        rank R, then R u32 dimensions
//     f32 * prod(dims) values, row-major
//
// Loading validates magic, version and exact payload length and throws
// FormatError on any violation; IoError covers filesystem failures.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cdrl/errors.hpp"
#include "cdrl/net.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    if (pos_ + 4 > bytes_.size()) throw FormatError(path_ + ": truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError(path_ + ": truncated checkpoint");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Serializes named float arrays in the order given.
inline std::string encode_params(const ParamSet<float>& params) {
  std::string out;
  out += "CDRL";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& it : params.items) {
    detail::put_u32(out, static_cast<std::uint32_t>(it.first.size()));
    out += it.first;
    const Tensor<float>& t = it.second;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) detail::put_f32(out, v);
  }
  return out;
}

inline ParamSet<float> decode_params(const std::string& bytes, const std::string& path) {
  detail::ByteReader r(bytes, path);
  if (r.str(4) != "CDRL") throw FormatError(path + ": bad magic, not a CDRL checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  ParamSet<float> params;
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(path + ": implausible tensor rank in checkpoint");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim > (1u << 28)) throw FormatError(path + ": implausible dimension in checkpoint");
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < numel; ++i) t[i] = r.f32();
    params.add(name, std::move(t));
  }
  if (!r.exhausted()) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return params;
}

inline void save_params(const ParamSet<float>& params, const std::string& path) {
  const std::string bytes = encode_params(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

inline ParamSet<float> load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failure: " + path);
  return decode_params(bytes, path);
}

}  // namespace cdrl
