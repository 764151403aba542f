#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ustrack/common.hpp"
#include "ustrack/tensor.hpp"

namespace ustrack {

// Ordered (name, tensor) list; the order is the serialization order.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Flat binary checkpoint:
//   magic "USTKCKP1"
//   u32 manifest entry count, then per entry: u32 len + key bytes,
//       u32 len + value bytes
//   u32 tensor count, then per tensor: u32 len + name bytes, u32 ndim,
//       u32 dims..., u64 value count, raw little-endian f64 values
// Values round-trip bit-exactly. The manifest carries the architecture
// description (layer sizes, anchor scales, window length, ...).
namespace ckpt_detail {

constexpr char kMagic[8] = {'U', 'S', 'T', 'K', 'C', 'K', 'P', '1'};

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline std::string get_str(std::istream& is) {
  std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("checkpoint: truncated string");
  return s;
}

}  // namespace ckpt_detail

struct Checkpoint {
  std::map<std::string, std::string> manifest;
  NamedParams params;

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw DataError("checkpoint: missing parameter '" + name + "'");
  }

  std::string manifest_at(const std::string& key) const {
    auto it = manifest.find(key);
    if (it == manifest.end())
      throw DataError("checkpoint: missing manifest key '" + key + "'");
    return it->second;
  }
};

inline void write_checkpoint(const std::string& path,
                             const std::map<std::string, std::string>& manifest,
                             const NamedParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  os.write(ckpt_detail::kMagic, 8);
  ckpt_detail::put_u32(os, static_cast<std::uint32_t>(manifest.size()));
  for (const auto& [k, v] : manifest) {
    ckpt_detail::put_str(os, k);
    ckpt_detail::put_str(os, v);
  }
  ckpt_detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    ckpt_detail::put_str(os, name);
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) ckpt_detail::put_u32(os, static_cast<std::uint32_t>(d));
    ckpt_detail::put_u64(os, static_cast<std::uint64_t>(t.size()));
    for (double v : t.values()) ckpt_detail::put_f64(os, v);
  }
  if (!os) throw DataError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in '" + path + "'");
  Checkpoint ck;
  const std::uint32_t nman = ckpt_detail::get_u32(is);
  for (std::uint32_t i = 0; i < nman; ++i) {
    std::string k = ckpt_detail::get_str(is);
    ck.manifest[k] = ckpt_detail::get_str(is);
  }
  const std::uint32_t nt = ckpt_detail::get_u32(is);
  for (std::uint32_t i = 0; i < nt; ++i) {
    std::string name = ckpt_detail::get_str(is);
    const std::uint32_t ndim = ckpt_detail::get_u32(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(ckpt_detail::get_u32(is));
    const std::uint64_t count = ckpt_detail::get_u64(is);
    if (static_cast<std::int64_t>(count) != numel(shape))
      throw DataError("checkpoint: count/shape mismatch for '" + name + "'");
    std::vector<double> vals(count);
    for (auto& v : vals) v = ckpt_detail::get_f64(is);
    ck.params.emplace_back(std::move(name), Tensor::from(std::move(vals), std::move(shape)));
  }
  return ck;
}

}  // namespace ustrack
