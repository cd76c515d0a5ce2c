#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "commnet/tensor.hpp"

namespace commnet {

/// Ordered, named parameter collection. Order is fixed at construction and
/// is the canonical iteration order everywhere (gradient reduction,
/// serialization), which is what keeps runs bit-reproducible.
class ParamSet {
public:
  Tensor& add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.back();
  }

  std::size_t count() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
  }

  /// Same shapes, zero values; the gradient accumulator layout.
  std::vector<Tensor> zeros_like() const {
    std::vector<Tensor> out;
    out.reserve(values_.size());
    for (const Tensor& t : values_) out.emplace_back(t.shape());
    return out;
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return -1;
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// Checkpoint file layout, all integers little-endian:
//   magic        8 bytes  "CMNTCKPT"
//   version      u32      currently 1
//   param count  u64
// then per parameter, in ParamSet order:
//   name length  u64
//   name         UTF-8 bytes
//   rank         u64
//   extents      u64 each
//   data         f64 little-endian, row-major
inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'N', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
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

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ParamSet& params) {
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u64(os, params.count());
  for (std::size_t p = 0; p < params.count(); ++p) {
    const std::string& name = params.name(p);
    const Tensor& t = params.value(p);
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, t.rank());
    for (std::size_t e : t.shape()) detail::put_u64(os, e);
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(os, t[i]);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
  save_checkpoint(os, params);
}

inline ParamSet load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes");
  std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t count = detail::get_u64(is);
  ParamSet params;
  for (std::uint64_t p = 0; p < count; ++p) {
    std::uint64_t name_len = detail::get_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint: truncated name");
    std::uint64_t rank = detail::get_u64(is);
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t r = 0; r < rank; ++r)
      shape[r] = static_cast<std::size_t>(detail::get_u64(is));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f64(is);
    params.add(std::move(name), std::move(t));
  }
  return params;
}

inline ParamSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(is);
}

/// Copies values from `src` into `dst` by name; shapes must match. Used to
/// restore a freshly built controller from a checkpoint.
inline void assign_checkpoint(ParamSet& dst, const ParamSet& src) {
  if (dst.count() != src.count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < dst.count(); ++i) {
    int j = src.index_of(dst.name(i));
    if (j < 0) throw std::runtime_error("checkpoint: missing parameter " + dst.name(i));
    const Tensor& s = src.value(static_cast<std::size_t>(j));
    if (!dst.value(i).same_shape(s))
      throw std::runtime_error("checkpoint: shape mismatch for " + dst.name(i));
    dst.value(i) = s;
  }
}

}  // namespace commnet
