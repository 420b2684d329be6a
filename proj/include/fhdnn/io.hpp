#pragma once

// Little-endian binary file formats.
//
//   FHT1  tensor:        "FHT1" u32 height u32 width u32 channels, f32[h*w*c] row-major (h, w, c)
//   FHL1  labels:        "FHL1" u32 count, u32[count]
//   FHD1  dense model:   "FHD1" u32 layers, per layer: 7 x u32 spec, f32 weights (out, ky, kx, in)
//   FHC1  clustered:     "FHC1" u32 layers, per layer: 7 x u32 spec, u32 G, u32 group count,
//                        per group: u32 members, u32[members] ids, index map as 4-bit nibbles
//                        (even tap in the low nibble), f32 centroids (member, cluster)
//   FHV1  class memory:  "FHV1" u32 N u32 D u8 train_bits, i16[N*D], u32[N] counters
//
// Spec fields are written in the order in_channels, out_channels, kernel,
// stride, padding, in_height, in_width.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fhdnn/errors.hpp"
#include "fhdnn/hdc.hpp"
#include "fhdnn/tensor.hpp"
#include "fhdnn/wclust.hpp"

namespace fhdnn::io {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i16(std::int16_t v) {
    const auto u = static_cast<std::uint16_t>(v);
    bytes_.push_back(static_cast<std::uint8_t>(u));
    bytes_.push_back(static_cast<std::uint8_t>(u >> 8));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

  const Bytes& bytes() const& { return bytes_; }
  Bytes bytes() && { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int16_t i16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return static_cast<std::int16_t>(v);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError(what_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated");
  }

  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes via a temporary sibling file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- tensors and labels ----

inline Bytes encode_tensor(const Tensor3<float>& t) {
  ByteWriter w;
  w.magic("FHT1");
  w.u32(static_cast<std::uint32_t>(t.height()));
  w.u32(static_cast<std::uint32_t>(t.width()));
  w.u32(static_cast<std::uint32_t>(t.channels()));
  for (const float v : t.data()) w.f32(v);
  return std::move(w).bytes();
}

inline Tensor3<float> decode_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FHT1 tensor");
  r.expect_magic("FHT1");
  const std::uint32_t h = r.u32(), wd = r.u32(), c = r.u32();
  const std::uint64_t n = std::uint64_t{h} * wd * c;
  if (n * 4 > bytes.size()) throw FormatError("FHT1 tensor: truncated");
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  r.expect_end();
  return Tensor3<float>(h, wd, c, std::move(data));
}

inline Bytes encode_labels(std::span<const std::uint32_t> labels) {
  ByteWriter w;
  w.magic("FHL1");
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (const auto l : labels) w.u32(l);
  return std::move(w).bytes();
}

inline std::vector<std::uint32_t> decode_labels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FHL1 labels");
  r.expect_magic("FHL1");
  const std::uint32_t n = r.u32();
  if (std::uint64_t{n} * 4 > bytes.size()) throw FormatError("FHL1 labels: truncated");
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = r.u32();
  r.expect_end();
  return labels;
}

// ---- models ----

namespace detail {

inline void write_spec(ByteWriter& w, const ConvLayerSpec& s) {
  for (const auto v : {s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, s.in_height, s.in_width}) w.u32(v);
}

inline ConvLayerSpec read_spec(ByteReader& r) {
  ConvLayerSpec s;
  s.in_channels = r.u32();
  s.out_channels = r.u32();
  s.kernel = r.u32();
  s.stride = r.u32();
  s.padding = r.u32();
  s.in_height = r.u32();
  s.in_width = r.u32();
  try {
    s.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid layer spec: ") + e.what());
  }
  return s;
}

}  // namespace detail

/// A stack of dense convolution layers.
using DenseModel = std::vector<DenseFilterBank<float>>;
/// A stack of clustered convolution layers.
using ClusteredModel = std::vector<ClusteredLayer<float>>;

inline Bytes encode_dense_model(const DenseModel& model) {
  ByteWriter w;
  w.magic("FHD1");
  w.u32(static_cast<std::uint32_t>(model.size()));
  for (const auto& bank : model) {
    detail::write_spec(w, bank.spec());
    for (const float v : bank.weights()) w.f32(v);
  }
  return std::move(w).bytes();
}

inline DenseModel decode_dense_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FHD1 dense model");
  r.expect_magic("FHD1");
  const std::uint32_t layers = r.u32();
  DenseModel model;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const ConvLayerSpec s = detail::read_spec(r);
    const std::uint64_t n = std::uint64_t{s.out_channels} * s.taps();
    if (n * 4 > bytes.size()) throw FormatError("FHD1 dense model: truncated");
    std::vector<float> weights(n);
    for (auto& v : weights) v = r.f32();
    model.emplace_back(s, std::move(weights));
  }
  r.expect_end();
  return model;
}

inline Bytes encode_clustered_model(const ClusteredModel& model) {
  ByteWriter w;
  w.magic("FHC1");
  w.u32(static_cast<std::uint32_t>(model.size()));
  for (const auto& layer : model) {
    layer.validate();
    detail::write_spec(w, layer.spec);
    w.u32(layer.clusters);
    w.u32(static_cast<std::uint32_t>(layer.groups.size()));
    for (const auto& g : layer.groups) {
      w.u32(static_cast<std::uint32_t>(g.members.size()));
      for (const auto m : g.members) w.u32(m);
      for (std::size_t p = 0; p < g.index_map.size(); p += 2) {
        const std::uint8_t lo = g.index_map[p] & 0x0F;
        const std::uint8_t hi = p + 1 < g.index_map.size() ? (g.index_map[p + 1] & 0x0F) : 0;
        w.u8(static_cast<std::uint8_t>(lo | (hi << 4)));
      }
      for (const float c : g.centroids) w.f32(c);
    }
  }
  return std::move(w).bytes();
}

inline ClusteredModel decode_clustered_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FHC1 clustered model");
  r.expect_magic("FHC1");
  const std::uint32_t layers = r.u32();
  ClusteredModel model;
  for (std::uint32_t l = 0; l < layers; ++l) {
    ClusteredLayer<float> layer;
    layer.spec = detail::read_spec(r);
    layer.clusters = r.u32();
    if (layer.clusters < 1 || layer.clusters > kMaxClusters) throw FormatError("FHC1: G outside [1, 16]");
    const std::uint32_t group_count = r.u32();
    if (group_count > layer.spec.out_channels) throw FormatError("FHC1: more groups than output channels");
    const std::size_t taps = layer.spec.taps();
    for (std::uint32_t gi = 0; gi < group_count; ++gi) {
      PatternGroup<float> g;
      g.cluster_count = layer.clusters;
      const std::uint32_t members = r.u32();
      if (members > layer.spec.out_channels) throw FormatError("FHC1: group larger than the layer");
      for (std::uint32_t m = 0; m < members; ++m) g.members.push_back(r.u32());
      const auto packed = r.raw((taps + 1) / 2);
      g.index_map.resize(taps);
      for (std::size_t p = 0; p < taps; ++p) {
        const std::uint8_t byte = packed[p / 2];
        g.index_map[p] = (p % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
      }
      g.centroids.resize(std::size_t{members} * layer.clusters);
      for (auto& c : g.centroids) c = r.f32();
      layer.groups.push_back(std::move(g));
    }
    try {
      layer.validate();
    } catch (const IntegrityError& e) {
      throw FormatError("FHC1 layer " + std::to_string(l) + ": " + e.what());
    }
    model.push_back(std::move(layer));
  }
  r.expect_end();
  return model;
}

// ---- class memory ----

inline Bytes encode_class_memory(const hdc::ClassMemory& mem) {
  ByteWriter w;
  w.magic("FHV1");
  w.u32(static_cast<std::uint32_t>(mem.classes()));
  w.u32(static_cast<std::uint32_t>(mem.dims()));
  w.u8(16);
  for (const auto v : mem.values()) w.i16(v);
  for (const auto c : mem.counters()) w.u32(c);
  return std::move(w).bytes();
}

inline hdc::ClassMemory decode_class_memory(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FHV1 class memory");
  r.expect_magic("FHV1");
  const std::uint32_t n = r.u32(), d = r.u32();
  const std::uint8_t bits = r.u8();
  if (bits != 16) throw FormatError("FHV1: train_bits must be 16, got " + std::to_string(bits));
  if (std::uint64_t{n} * d * 2 > bytes.size()) throw FormatError("FHV1 class memory: truncated");
  std::vector<std::int16_t> values(std::size_t{n} * d);
  for (auto& v : values) v = r.i16();
  std::vector<std::uint32_t> counters(n);
  for (auto& c : counters) c = r.u32();
  r.expect_end();
  return hdc::ClassMemory::from_parts(n, d, std::move(values), std::move(counters));
}

}  // namespace fhdnn::io
