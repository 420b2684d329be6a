#pragma once

#include <cstdint>

#include "fhdnn/tensor.hpp"

namespace fhdnn {

/// Operation and parameter counts for one layer (or a sum of layers).
///
/// Convention: a dense MAC is one multiply plus one add. Index entries are
/// 4 bits, centroid and dense weight values are 16 bits.
struct CostRecord {
  std::uint64_t multiplies = 0;
  std::uint64_t adds = 0;
  std::uint64_t index_params = 0;
  std::uint64_t centroid_params = 0;
  double bytes_params = 0.0;

  std::uint64_t ops() const { return multiplies + adds; }

  CostRecord& operator+=(const CostRecord& o) {
    multiplies += o.multiplies;
    adds += o.adds;
    index_params += o.index_params;
    centroid_params += o.centroid_params;
    bytes_params += o.bytes_params;
    return *this;
  }
  friend bool operator==(const CostRecord&, const CostRecord&) = default;
};

inline constexpr double kIndexBytes = 0.5;
inline constexpr double kWeightBytes = 2.0;

/// Cost of the uncompressed layer; dense weights are reported as centroid_params.
inline CostRecord dense_cost(const ConvLayerSpec& spec) {
  spec.validate();
  CostRecord r;
  const std::uint64_t weights = std::uint64_t{spec.out_channels} * spec.taps();
  r.multiplies = weights * spec.out_pixels();
  r.adds = r.multiplies;
  r.centroid_params = weights;
  r.bytes_params = static_cast<double>(weights) * kWeightBytes;
  return r;
}

}  // namespace fhdnn
