#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hoiopt/neural_denoiser.hpp"

namespace hoiopt {

// Weights file layout (little-endian):
//   magic "SHOI" | u32 format version | u64 architecture hash |
//   u32 tensor count | per tensor: u32 name length, name bytes,
//   u32 ndim, u64 dims..., f64 data...
// The architecture fields themselves ride along as the "arch.meta" tensor,
// which makes files self-describing.
inline constexpr uint32_t kWeightsFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<uint64_t>(d)); }

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline Tensor arch_meta_tensor(const DenoiserArch& a) {
  return Tensor({11}, {static_cast<double>(a.joints), static_cast<double>(a.width),
                       static_cast<double>(a.heads), static_cast<double>(a.layers),
                       static_cast<double>(a.obs_dim), static_cast<double>(a.obs_tokens),
                       static_cast<double>(a.geo_tokens), static_cast<double>(a.geo_hidden),
                       static_cast<double>(a.time_dim), static_cast<double>(a.time_hidden),
                       a.conditional ? 1.0 : 0.0});
}

inline DenoiserArch arch_from_meta(const Tensor& t) {
  if (t.numel() != 11) fail_data("weights file: malformed arch.meta tensor");
  DenoiserArch a;
  a.joints = static_cast<int64_t>(t[0]);
  a.width = static_cast<int64_t>(t[1]);
  a.heads = static_cast<int64_t>(t[2]);
  a.layers = static_cast<int64_t>(t[3]);
  a.obs_dim = static_cast<int64_t>(t[4]);
  a.obs_tokens = static_cast<int64_t>(t[5]);
  a.geo_tokens = static_cast<int64_t>(t[6]);
  a.geo_hidden = static_cast<int64_t>(t[7]);
  a.time_dim = static_cast<int64_t>(t[8]);
  a.time_hidden = static_cast<int64_t>(t[9]);
  a.conditional = t[10] != 0.0;
  return a;
}

}  // namespace detail

inline void save_weights(const DenoiserWeights& w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail_data("save_weights: cannot open " + path.string() + " for writing");
  os.write("SHOI", 4);
  detail::put_u32(os, kWeightsFormatVersion);
  detail::put_u64(os, w.arch.hash());
  detail::put_u32(os, static_cast<uint32_t>(w.tensors.size() + 1));
  auto write_tensor = [&](const std::string& name, const Tensor& t) {
    detail::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int64_t d = 0; d < t.ndim(); ++d) detail::put_u64(os, static_cast<uint64_t>(t.dim(d)));
    for (int64_t i = 0; i < t.numel(); ++i) detail::put_f64(os, t[i]);
  };
  write_tensor("arch.meta", detail::arch_meta_tensor(w.arch));
  for (const auto& [name, t] : w.tensors) write_tensor(name, t);
  if (!os) fail_data("save_weights: write failure on " + path.string());
}

/// Loads a weights bundle. When `expected` is given, the architecture hash
/// and every tensor shape are validated against it; mismatches name the
/// offending tensor.
inline DenoiserWeights load_weights(const std::filesystem::path& path,
                                    const DenoiserArch* expected = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_data("load_weights: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SHOI", 4) != 0)
    fail_data("load_weights: bad magic in " + path.string());
  uint32_t version = detail::get_u32(is);
  if (version != kWeightsFormatVersion)
    fail_data("load_weights: unsupported format version " + std::to_string(version) + " in " +
              path.string());
  uint64_t file_hash = detail::get_u64(is);
  uint32_t count = detail::get_u32(is);
  if (!is) fail_data("load_weights: truncated header in " + path.string());

  std::map<std::string, Tensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::get_u32(is);
    if (!is || name_len > 4096) fail_data("load_weights: corrupt tensor name in " + path.string());
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = detail::get_u32(is);
    if (!is || ndim > 8) fail_data("load_weights: corrupt tensor '" + name + "'");
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int64_t>(detail::get_u64(is));
    int64_t n = shape_numel(shape);
    if (!is || n < 0 || n > (1 << 28)) fail_data("load_weights: corrupt shape of '" + name + "'");
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) data[static_cast<size_t>(j)] = detail::get_f64(is);
    if (!is) fail_data("load_weights: truncated data of tensor '" + name + "' in " + path.string());
    tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }

  auto meta = tensors.find("arch.meta");
  if (meta == tensors.end()) fail_data("load_weights: missing arch.meta in " + path.string());
  DenoiserWeights w;
  w.arch = detail::arch_from_meta(meta->second);
  tensors.erase(meta);
  w.tensors = std::move(tensors);
  if (file_hash != w.arch.hash())
    fail_data("load_weights: architecture hash mismatch in " + path.string());

  if (expected) {
    if (w.arch.hash() != expected->hash()) {
      // find the first shape that disagrees so the error names a tensor
      Rng rng(0);
      DenoiserWeights ref = DenoiserWeights::init(*expected, rng);
      for (const auto& [name, t] : ref.tensors) {
        auto it = w.tensors.find(name);
        if (it == w.tensors.end())
          fail_data("load_weights: architecture mismatch; tensor '" + name + "' missing from " +
                    path.string());
        if (it->second.shape() != t.shape())
          fail_data("load_weights: architecture mismatch; tensor '" + name + "' has shape " +
                    shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
      }
      fail_data("load_weights: architecture hash mismatch against expected configuration");
    }
  }

  // shape audit against a freshly initialized bundle of the same arch
  Rng rng(0);
  DenoiserWeights ref = DenoiserWeights::init(w.arch, rng);
  for (const auto& [name, t] : ref.tensors) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end())
      fail_data("load_weights: tensor '" + name + "' missing from " + path.string());
    if (it->second.shape() != t.shape())
      fail_data("load_weights: tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                ", expected " + shape_str(t.shape()));
  }
  return w;
}

}  // namespace hoiopt
