#pragma once

// Hyperdimensional classifier and single-pass few-shot learner.
//
// Encoding projects an F-dim feature vector onto D dimensions through a
// bipolar matrix B and keeps the sign. B is never stored: entry (f, d) is
//   block[(d + f) mod 256]
// for a 256-entry bipolar seed block, i.e. row f is row 0 cyclically shifted
// by f. Class prototypes are 16-bit saturating integer HVs; inference picks
// the class with the smallest L1 distance to the (optionally quantized)
// prototype.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <limits>
#include <ranges>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhdnn/errors.hpp"
#include "fhdnn/rng.hpp"

namespace fhdnn::hdc {

inline constexpr std::size_t kSeedBlockSize = 256;
inline constexpr std::size_t kCyclicStride = 1;

enum class UpdateRule {
  kLiteral,          ///< hit: add to the predicted class; miss: subtract from the predicted class
  kAddCorrectOnMiss, ///< as above, and on a miss also add to the true class
};

enum class Encoding {
  kBipolar,  ///< sign of the projection, sign(0) = +1
  kRaw,      ///< projection rounded to the nearest integer, saturated to 16 bits
};

struct HdcConfig {
  std::uint32_t features = 64;
  std::uint32_t dims = 4096;
  std::uint32_t classes = 10;
  std::uint32_t train_bits = 16;
  std::uint32_t infer_bits = 8;
  std::uint64_t seed = 0;
  UpdateRule update_rule = UpdateRule::kLiteral;
  Encoding encoding = Encoding::kBipolar;

  /// Checks the ranges the hardware supports.
  void validate() const {
    auto range = [](const char* name, std::uint64_t v, std::uint64_t lo, std::uint64_t hi) {
      if (v < lo || v > hi) {
        throw ConfigError(std::string(name) + " = " + std::to_string(v) + " outside supported range [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
      }
    };
    range("F", features, 16, 1024);
    range("D", dims, 1024, 8192);
    range("N", classes, 2, 128);
    range("infer_bits", infer_bits, 1, 16);
    if (train_bits != 16) throw ConfigError("train_bits is fixed at 16");
  }
};

inline std::string to_string(UpdateRule r) {
  return r == UpdateRule::kLiteral ? "literal" : "add-correct-on-miss";
}

inline UpdateRule parse_update_rule(const std::string& s) {
  if (s == "literal") return UpdateRule::kLiteral;
  if (s == "add-correct-on-miss") return UpdateRule::kAddCorrectOnMiss;
  throw ConfigError("unknown update rule '" + s + "'");
}

/// The 256 stored bipolar values every projection entry is generated from.
struct CrpSeedBlock {
  std::array<std::int8_t, kSeedBlockSize> values{};
  std::uint64_t seed = 0;

  /// Entry i is +1 iff the top bit of word i of the "crp-seed-block" sub-stream of `seed` is set.
  static CrpSeedBlock generate(std::uint64_t seed) {
    CrpSeedBlock b;
    b.seed = seed;
    const CounterRng rng = CounterRng(seed).split("crp-seed-block");
    for (std::size_t i = 0; i < kSeedBlockSize; ++i) b.values[i] = (rng.at(i) >> 63) ? 1 : -1;
    return b;
  }

  friend bool operator==(const CrpSeedBlock&, const CrpSeedBlock&) = default;
};

struct Hypervector {
  std::vector<std::int16_t> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const Hypervector&, const Hypervector&) = default;
};

/// Cyclic random projection encoder.
class CrpEncoder {
 public:
  CrpEncoder(std::size_t features, std::size_t dims, CrpSeedBlock block, Encoding encoding = Encoding::kBipolar)
      : features_(features), dims_(dims), block_(block), encoding_(encoding) {
    if (features_ < 1 || dims_ < 1) throw ConfigError("encoder needs F >= 1 and D >= 1");
  }

  explicit CrpEncoder(const HdcConfig& cfg)
      : CrpEncoder(cfg.features, cfg.dims, CrpSeedBlock::generate(cfg.seed), cfg.encoding) {}

  std::size_t features() const { return features_; }
  std::size_t dims() const { return dims_; }
  const CrpSeedBlock& block() const { return block_; }

  /// Projection matrix entry B[f][d], generated on demand.
  int entry(std::size_t f, std::size_t d) const {
    if (f >= features_ || d >= dims_) {
      throw std::out_of_range("projection index (" + std::to_string(f) + ", " + std::to_string(d) +
                              ") outside " + std::to_string(features_) + "x" + std::to_string(dims_));
    }
    return block_.values[(d + f * kCyclicStride) % kSeedBlockSize];
  }

  /// Encodes one feature vector. Projections are summed in double, f ascending.
  Hypervector encode(std::span<const float> x) const {
    if (x.size() != features_) {
      throw ShapeError("feature vector has " + std::to_string(x.size()) + " values, encoder expects " +
                       std::to_string(features_));
    }
    // Column d only depends on d mod 256, so one period of projections is enough.
    const std::size_t period = std::min(dims_, kSeedBlockSize);
    std::array<std::int16_t, kSeedBlockSize> lane{};
    for (std::size_t r = 0; r < period; ++r) {
      double acc = 0.0;
      for (std::size_t f = 0; f < features_; ++f) {
        const double v = x[f];
        acc += block_.values[(r + f * kCyclicStride) % kSeedBlockSize] > 0 ? v : -v;
      }
      lane[r] = finish(acc);
    }
    Hypervector h;
    h.values.resize(dims_);
    for (std::size_t d = 0; d < dims_; ++d) h.values[d] = lane[d % kSeedBlockSize];
    return h;
  }

 private:
  std::int16_t finish(double projection) const {
    if (!std::isfinite(projection)) throw DataError("non-finite feature value");
    if (encoding_ == Encoding::kBipolar) return projection >= 0.0 ? 1 : -1;
    const double r = std::clamp(std::round(projection), -32768.0, 32767.0);
    return static_cast<std::int16_t>(r);
  }

  std::size_t features_;
  std::size_t dims_;
  CrpSeedBlock block_;
  Encoding encoding_;
};

/// Maximum code magnitude for an inference precision (1 for bits <= 2).
inline std::int32_t quant_levels(unsigned bits) {
  if (bits < 1 || bits > 16) throw ConfigError("infer_bits must be in [1, 16]");
  if (bits == 16) return std::numeric_limits<std::int16_t>::max();
  return bits == 1 ? 1 : (std::int32_t{1} << (bits - 1)) - 1;
}

/// Factor applied to the bipolar query before comparing with quantized codes.
/// Full precision compares raw values; lower precisions compare against the
/// quantizer's full scale, so the query is lifted to +-levels.
inline std::int32_t query_scale(unsigned bits) { return bits == 16 ? 1 : quant_levels(bits); }

/// Quantizes a 16-bit class HV to `bits` of precision.
///   16: identity.  1: sign with 0 -> +1.
///   otherwise: q = round(c / max|c| * (2^(bits-1) - 1)), halves away from zero; all-zero stays zero.
inline std::vector<std::int16_t> quantize(std::span<const std::int16_t> c, unsigned bits) {
  const std::int32_t levels = quant_levels(bits);
  std::vector<std::int16_t> q(c.begin(), c.end());
  if (bits == 16) return q;
  if (bits == 1) {
    for (auto& v : q) v = v >= 0 ? 1 : -1;
    return q;
  }
  std::int32_t scale = 0;
  for (const auto v : c) scale = std::max(scale, std::abs(std::int32_t{v}));
  if (scale == 0) return q;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::int64_t mag = std::abs(std::int64_t{c[i]});
    const std::int64_t r = (2 * mag * levels + scale) / (2 * std::int64_t{scale});
    q[i] = static_cast<std::int16_t>(c[i] < 0 ? -r : r);
  }
  return q;
}

/// Sum over d of |scale(bits) * h[d] - class_q[d]| in exact integer arithmetic.
/// `class_q` must already be quantized to `bits`.
inline std::int64_t l1_distance(std::span<const std::int16_t> h, std::span<const std::int16_t> class_q,
                                unsigned bits) {
  if (h.size() != class_q.size()) {
    throw ShapeError("hypervector dims differ: " + std::to_string(h.size()) + " vs " + std::to_string(class_q.size()));
  }
  const std::int64_t s = query_scale(bits);
  std::int64_t dist = 0;
  for (std::size_t d = 0; d < h.size(); ++d) {
    const std::int64_t diff = s * h[d] - class_q[d];
    dist += diff < 0 ? -diff : diff;
  }
  return dist;
}

/// N class prototypes of D 16-bit values plus per-class sample counters.
class ClassMemory {
 public:
  ClassMemory() = default;
  ClassMemory(std::size_t classes, std::size_t dims)
      : classes_(classes), dims_(dims), values_(classes * dims, 0), counters_(classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::size_t dims() const { return dims_; }

  std::span<const std::int16_t> row(std::size_t n) const {
    return std::span<const std::int16_t>(values_).subspan(n * dims_, dims_);
  }
  std::span<const std::int16_t> values() const { return values_; }
  std::span<const std::uint32_t> counters() const { return counters_; }
  std::uint64_t saturation_events() const { return saturation_events_; }

  bool is_zero(std::size_t n) const {
    const auto r = row(n);
    return std::all_of(r.begin(), r.end(), [](std::int16_t v) { return v == 0; });
  }

  /// row(n) += sign * h, clamped to the int16 range; clamps are counted.
  void accumulate(std::size_t n, const Hypervector& h, int sign) {
    if (h.dim() != dims_) throw ShapeError("hypervector dim does not match class memory");
    std::int16_t* r = values_.data() + n * dims_;
    for (std::size_t d = 0; d < dims_; ++d) {
      const std::int32_t v = std::int32_t{r[d]} + sign * std::int32_t{h.values[d]};
      const std::int32_t c = std::clamp<std::int32_t>(v, std::numeric_limits<std::int16_t>::min(),
                                                      std::numeric_limits<std::int16_t>::max());
      if (c != v) ++saturation_events_;
      r[d] = static_cast<std::int16_t>(c);
    }
  }

  void count_sample(std::size_t n) { ++counters_[n]; }

  /// Rebuilds a memory from stored state (file loading).
  static ClassMemory from_parts(std::size_t classes, std::size_t dims, std::vector<std::int16_t> values,
                                std::vector<std::uint32_t> counters) {
    if (values.size() != classes * dims || counters.size() != classes) {
      throw ShapeError("class memory parts have inconsistent sizes");
    }
    ClassMemory m;
    m.classes_ = classes;
    m.dims_ = dims;
    m.values_ = std::move(values);
    m.counters_ = std::move(counters);
    return m;
  }

  /// Equality of stored state (values and counters); the saturation counter is diagnostic only.
  friend bool operator==(const ClassMemory& a, const ClassMemory& b) {
    return a.classes_ == b.classes_ && a.dims_ == b.dims_ && a.values_ == b.values_ && a.counters_ == b.counters_;
  }

 private:
  std::size_t classes_ = 0;
  std::size_t dims_ = 0;
  std::vector<std::int16_t> values_;
  std::vector<std::uint32_t> counters_;
  std::uint64_t saturation_events_ = 0;
};

/// Class memory quantized once for a batch of queries.
class QuantizedMemory {
 public:
  QuantizedMemory(const ClassMemory& mem, unsigned bits) : bits_(bits), dims_(mem.dims()) {
    codes_.reserve(mem.classes() * mem.dims());
    for (std::size_t n = 0; n < mem.classes(); ++n) {
      const auto q = quantize(mem.row(n), bits);
      codes_.insert(codes_.end(), q.begin(), q.end());
    }
  }

  std::size_t classes() const { return dims_ ? codes_.size() / dims_ : 0; }
  unsigned bits() const { return bits_; }
  std::span<const std::int16_t> row(std::size_t n) const {
    return std::span<const std::int16_t>(codes_).subspan(n * dims_, dims_);
  }

 private:
  unsigned bits_;
  std::size_t dims_;
  std::vector<std::int16_t> codes_;
};

struct Classification {
  std::size_t predicted = 0;
  std::vector<std::int64_t> distances;

  std::int64_t min_distance() const { return distances.empty() ? 0 : distances[predicted]; }
};

/// Nearest class by L1 distance; ties go to the lowest class id.
inline Classification classify(const Hypervector& h, const QuantizedMemory& mem) {
  Classification out;
  out.distances.reserve(mem.classes());
  for (std::size_t n = 0; n < mem.classes(); ++n) {
    out.distances.push_back(l1_distance(h.values, mem.row(n), mem.bits()));
    if (out.distances.back() < out.distances[out.predicted]) out.predicted = n;
  }
  return out;
}

inline Classification classify(const Hypervector& h, const ClassMemory& mem, unsigned infer_bits) {
  return classify(h, QuantizedMemory(mem, infer_bits));
}

/// A training sample as seen by the learner.
struct LabeledSample {
  std::span<const float> features;
  std::uint32_t label = 0;
};

template <typename It>
concept LabeledSampleIterator = std::input_iterator<It> && requires(It it) {
  { LabeledSample(*it) };
};

struct TrainStats {
  std::size_t samples = 0;
  std::size_t bootstraps = 0;
  std::size_t hits = 0;
  std::size_t misses = 0;
};

/// Single pass over the samples, in order, each dereferenced exactly once.
///
/// For every sample: encode; if its class prototype is still all-zero, add the
/// HV there (bootstrap); otherwise classify against the current memory at
/// `cfg.infer_bits` and add the HV to the predicted class on a hit or subtract
/// it from the predicted class on a miss (plus, under kAddCorrectOnMiss, add
/// it to the true class).
template <LabeledSampleIterator It, std::sentinel_for<It> Sentinel>
TrainStats train_single_pass(It first, Sentinel last, ClassMemory& mem, const CrpEncoder& encoder,
                             const HdcConfig& cfg) {
  if (encoder.dims() != mem.dims()) throw ShapeError("encoder D does not match class memory D");
  TrainStats stats;
  for (; first != last; ++first) {
    const LabeledSample sample(*first);
    if (sample.label >= mem.classes()) {
      throw DataError("label " + std::to_string(sample.label) + " >= class count " + std::to_string(mem.classes()));
    }
    const Hypervector h = encoder.encode(sample.features);
    ++stats.samples;
    mem.count_sample(sample.label);
    if (mem.is_zero(sample.label)) {
      mem.accumulate(sample.label, h, +1);
      ++stats.bootstraps;
      continue;
    }
    const std::size_t predicted = classify(h, mem, cfg.infer_bits).predicted;
    if (predicted == sample.label) {
      mem.accumulate(predicted, h, +1);
      ++stats.hits;
    } else {
      mem.accumulate(predicted, h, -1);
      if (cfg.update_rule == UpdateRule::kAddCorrectOnMiss) mem.accumulate(sample.label, h, +1);
      ++stats.misses;
    }
  }
  return stats;
}

template <std::ranges::input_range Range>
TrainStats train_single_pass(Range&& samples, ClassMemory& mem, const CrpEncoder& encoder, const HdcConfig& cfg) {
  return train_single_pass(std::ranges::begin(samples), std::ranges::end(samples), mem, encoder, cfg);
}

enum class ProjectionStorage { kExplicit, kCyclic };

struct Footprint {
  std::uint64_t stored_elements = 0;
  double reduction_ratio = 0.0;  ///< explicit elements / stored elements
};

/// Projection-matrix elements that must be stored for each encoder style.
inline Footprint memory_footprint(std::uint64_t features, std::uint64_t dims, ProjectionStorage mode) {
  const std::uint64_t full = features * dims;
  Footprint f;
  f.stored_elements = mode == ProjectionStorage::kExplicit ? full : kSeedBlockSize;
  f.reduction_ratio = static_cast<double>(full) / static_cast<double>(f.stored_elements);
  return f;
}

inline Footprint memory_footprint(const HdcConfig& cfg, ProjectionStorage mode) {
  cfg.validate();
  return memory_footprint(cfg.features, cfg.dims, mode);
}

}  // namespace fhdnn::hdc
