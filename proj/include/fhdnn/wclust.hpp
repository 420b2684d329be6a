#pragma once

// Weight clustering and the accumulate-then-multiply convolution.
//
// A filter's weights are replaced by at most 16 centroid values plus a 4-bit
// cluster index per (ky, kx, in_channel) position. Output channels in one
// PatternGroup share the index map, so for every output pixel the inputs are
// summed once per cluster and each member channel only needs G multiplies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fhdnn/cost.hpp"
#include "fhdnn/errors.hpp"
#include "fhdnn/tensor.hpp"

namespace fhdnn {

inline constexpr std::size_t kMaxClusters = 16;

enum class KMeansMethod {
  kOptimal,  ///< exact 1-D k-means (dynamic programming), then Lloyd polish
  kLloyd,    ///< Lloyd iterations from quantile seeds
};

/// Result of clustering a list of scalars. `centroids` is sorted ascending and
/// contains only non-empty clusters.
struct Clustering {
  std::vector<std::uint8_t> index;
  std::vector<double> centroids;

  std::size_t group_count() const { return centroids.size(); }
};

namespace detail {

// Sum of squared deviations of sorted[i, j) from their mean, via prefix sums.
struct SegmentCost {
  std::vector<long double> s1, s2;

  explicit SegmentCost(std::span<const double> sorted) : s1(sorted.size() + 1, 0), s2(sorted.size() + 1, 0) {
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      s1[i + 1] = s1[i] + sorted[i];
      s2[i + 1] = s2[i] + static_cast<long double>(sorted[i]) * sorted[i];
    }
  }

  long double operator()(std::size_t i, std::size_t j) const {
    if (j <= i + 1) return 0;
    const long double n = static_cast<long double>(j - i);
    const long double sum = s1[j] - s1[i];
    return std::max<long double>(0, (s2[j] - s2[i]) - sum * sum / n);
  }
};

// Fills row `cur[lo..hi]` of the k-means DP with divide and conquer; split points are monotone.
inline void dp_layer(const SegmentCost& cost, const std::vector<long double>& prev, std::vector<long double>& cur,
                     std::vector<std::size_t>& arg, std::size_t lo, std::size_t hi, std::size_t opt_lo,
                     std::size_t opt_hi) {
  if (lo > hi) return;
  const std::size_t mid = lo + (hi - lo) / 2;
  long double best = std::numeric_limits<long double>::infinity();
  std::size_t best_i = opt_lo;
  for (std::size_t i = opt_lo; i <= std::min(mid - 1, opt_hi); ++i) {
    const long double v = prev[i] + cost(i, mid);
    if (v < best) {
      best = v;
      best_i = i;
    }
  }
  cur[mid] = best;
  arg[mid] = best_i;
  if (mid > lo) dp_layer(cost, prev, cur, arg, lo, mid - 1, opt_lo, best_i);
  dp_layer(cost, prev, cur, arg, mid + 1, hi, best_i, opt_hi);
}

inline std::size_t nearest(std::span<const double> centroids, double v) {
  std::size_t best = 0;
  double best_d = std::abs(v - centroids[0]);
  for (std::size_t g = 1; g < centroids.size(); ++g) {
    const double d = std::abs(v - centroids[g]);
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = g;
    }
  }
  return best;
}

// Lloyd iterations from the given centroids until the assignment is a fixpoint (or 100 rounds).
inline std::vector<std::size_t> lloyd(std::span<const double> values, std::vector<double>& centroids) {
  std::vector<std::size_t> assign(values.size(), std::numeric_limits<std::size_t>::max());
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::size_t g = nearest(centroids, values[i]);
      if (g != assign[i]) {
        assign[i] = g;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<long double> sum(centroids.size(), 0);
    std::vector<std::size_t> count(centroids.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[assign[i]] += values[i];
      ++count[assign[i]];
    }
    for (std::size_t g = 0; g < centroids.size(); ++g) {
      if (count[g] > 0) centroids[g] = static_cast<double>(sum[g] / static_cast<long double>(count[g]));
    }
  }
  return assign;
}

// Drops empty clusters and renumbers so centroids ascend.
inline Clustering compact(std::span<const double> values, std::span<const double> centroids,
                          std::span<const std::size_t> assign) {
  std::vector<std::size_t> used;
  for (std::size_t g = 0; g < centroids.size(); ++g) {
    if (std::find(assign.begin(), assign.end(), g) != assign.end()) used.push_back(g);
  }
  std::stable_sort(used.begin(), used.end(), [&](std::size_t a, std::size_t b) { return centroids[a] < centroids[b]; });
  std::vector<std::uint8_t> remap(centroids.size(), 0);
  Clustering out;
  for (std::size_t k = 0; k < used.size(); ++k) {
    remap[used[k]] = static_cast<std::uint8_t>(k);
    out.centroids.push_back(centroids[used[k]]);
  }
  out.index.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.index[i] = remap[assign[i]];
  return out;
}

}  // namespace detail

/// 1-D k-means over scalar values into at most `groups` clusters.
///
/// When `groups` is at least the number of distinct values every distinct
/// value becomes its own centroid (zero error). Otherwise kOptimal returns a
/// partition with globally minimal within-cluster squared error; kLloyd seeds
/// centroids at the values of rank floor((g + 0.5) * n / groups) and iterates.
/// Nearest-centroid ties go to the lower centroid.
inline Clustering kmeans_1d(std::span<const double> values, std::size_t groups,
                            KMeansMethod method = KMeansMethod::kOptimal) {
  if (groups < 1 || groups > kMaxClusters) {
    throw ConfigError("cluster count must be in [1, 16], got " + std::to_string(groups));
  }
  if (values.empty()) throw ShapeError("cannot cluster an empty weight slice");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> centroids;
  if (groups >= distinct.size()) {
    centroids = distinct;
  } else if (method == KMeansMethod::kLloyd) {
    const std::size_t n = sorted.size();
    for (std::size_t g = 0; g < groups; ++g) centroids.push_back(sorted[(2 * g + 1) * n / (2 * groups)]);
  } else {
    const std::size_t n = sorted.size();
    const detail::SegmentCost cost(sorted);
    const long double inf = std::numeric_limits<long double>::infinity();
    // dp[k][j]: best cost of the first j sorted values in k+1 clusters.
    std::vector<std::vector<long double>> dp(groups, std::vector<long double>(n + 1, inf));
    std::vector<std::vector<std::size_t>> arg(groups, std::vector<std::size_t>(n + 1, 0));
    for (std::size_t j = 1; j <= n; ++j) dp[0][j] = cost(0, j);
    for (std::size_t k = 1; k < groups; ++k) {
      detail::dp_layer(cost, dp[k - 1], dp[k], arg[k], k + 1, n, k, n - 1);
    }
    std::vector<std::size_t> bounds(groups + 1, 0);
    bounds[groups] = n;
    for (std::size_t k = groups - 1; k > 0; --k) bounds[k] = arg[k][bounds[k + 1]];
    for (std::size_t k = 0; k < groups; ++k) {
      const long double sum = cost.s1[bounds[k + 1]] - cost.s1[bounds[k]];
      centroids.push_back(static_cast<double>(sum / static_cast<long double>(bounds[k + 1] - bounds[k])));
    }
  }
  const auto assign = detail::lloyd(values, centroids);
  return detail::compact(values, centroids, assign);
}

/// Within-cluster squared error of a clustering over `values`.
inline double clustering_error(std::span<const double> values, const Clustering& c) {
  long double err = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const long double d = static_cast<long double>(values[i]) - c.centroids[c.index[i]];
    err += d * d;
  }
  return static_cast<double>(err);
}

/// Clusters one output channel's weights (ordered (ky, kx, in_channel)).
template <typename Real>
Clustering cluster_filter(std::span<const Real> weights, std::size_t groups,
                          KMeansMethod method = KMeansMethod::kOptimal) {
  std::vector<double> v(weights.begin(), weights.end());
  return kmeans_1d(v, groups, method);
}

/// Output channels sharing one cluster-index map.
///
/// `centroids` is row-major (member, cluster) with `cluster_count` entries per
/// member; clusters the index map never references hold 0.
template <typename Real = float>
struct PatternGroup {
  std::vector<std::uint8_t> index_map;
  std::vector<std::uint32_t> members;
  std::vector<Real> centroids;
  std::uint32_t cluster_count = 0;

  Real centroid(std::size_t member_slot, std::size_t cluster) const {
    return centroids[member_slot * cluster_count + cluster];
  }

  friend bool operator==(const PatternGroup&, const PatternGroup&) = default;
};

/// One clustered convolution layer: spec, requested G and its pattern groups.
template <typename Real = float>
struct ClusteredLayer {
  ConvLayerSpec spec;
  std::uint32_t clusters = 0;
  std::vector<PatternGroup<Real>> groups;

  /// Throws IntegrityError if the groups do not form a well-formed layer.
  void validate() const {
    spec.validate();
    if (clusters < 1 || clusters > kMaxClusters) throw IntegrityError("layer G must be in [1, 16]");
    std::vector<int> seen(spec.out_channels, 0);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      const std::string where = "pattern group " + std::to_string(gi);
      if (g.cluster_count != clusters) throw IntegrityError(where + ": cluster count differs from layer G");
      if (g.index_map.size() != spec.taps()) throw IntegrityError(where + ": index map has wrong length");
      if (g.members.empty()) throw IntegrityError(where + ": no member channels");
      if (g.centroids.size() != g.members.size() * g.cluster_count) {
        throw IntegrityError(where + ": centroid table has wrong length");
      }
      for (const auto idx : g.index_map) {
        if (idx >= g.cluster_count) {
          throw IntegrityError(where + ": index " + std::to_string(idx) + " >= G " + std::to_string(g.cluster_count));
        }
      }
      for (const auto m : g.members) {
        if (m >= spec.out_channels || seen[m]++) {
          throw IntegrityError(where + ": member channel " + std::to_string(m) + " invalid or duplicated");
        }
      }
    }
    for (std::size_t c = 0; c < seen.size(); ++c) {
      if (!seen[c]) throw IntegrityError("output channel " + std::to_string(c) + " belongs to no pattern group");
    }
  }

  friend bool operator==(const ClusteredLayer&, const ClusteredLayer&) = default;
};

/// Partitions output channels into consecutive runs of `group_size` (0 means
/// all channels; the last run may be shorter) and fits one shared index map
/// per run on the per-position mean weight. Member centroids are the
/// class-conditional means of that member's own weights.
template <typename Real>
ClusteredLayer<Real> share_patterns(const DenseFilterBank<Real>& bank, std::size_t groups, std::size_t group_size = 0,
                                    KMeansMethod method = KMeansMethod::kOptimal) {
  const ConvLayerSpec& spec = bank.spec();
  if (bank.weights().empty()) throw ShapeError("cannot cluster an empty filter bank");
  if (groups < 1 || groups > kMaxClusters) throw ConfigError("G must be in [1, 16]");
  const std::size_t out = spec.out_channels;
  if (group_size == 0 || group_size > out) group_size = out;
  const std::size_t taps = spec.taps();

  ClusteredLayer<Real> layer{spec, static_cast<std::uint32_t>(groups), {}};
  for (std::size_t first = 0; first < out; first += group_size) {
    const std::size_t last = std::min(out, first + group_size);
    PatternGroup<Real> pg;
    pg.cluster_count = static_cast<std::uint32_t>(groups);
    std::vector<double> mean(taps, 0.0);
    for (std::size_t p = 0; p < taps; ++p) {
      long double s = 0;
      for (std::size_t m = first; m < last; ++m) s += bank.channel(m)[p];
      mean[p] = static_cast<double>(s / static_cast<long double>(last - first));
    }
    const Clustering shared = kmeans_1d(mean, groups, method);
    pg.index_map = shared.index;
    for (std::size_t m = first; m < last; ++m) {
      pg.members.push_back(static_cast<std::uint32_t>(m));
      std::vector<long double> sum(groups, 0);
      std::vector<std::size_t> count(groups, 0);
      const auto w = bank.channel(m);
      for (std::size_t p = 0; p < taps; ++p) {
        sum[pg.index_map[p]] += w[p];
        ++count[pg.index_map[p]];
      }
      for (std::size_t g = 0; g < groups; ++g) {
        pg.centroids.push_back(count[g] ? static_cast<Real>(sum[g] / static_cast<long double>(count[g])) : Real{0});
      }
    }
    layer.groups.push_back(std::move(pg));
  }
  return layer;
}

/// Dense bank whose weight at (out, tap) is the member's centroid for the tap's cluster.
template <typename Real>
DenseFilterBank<Real> expand(const ClusteredLayer<Real>& layer) {
  layer.validate();
  const std::size_t taps = layer.spec.taps();
  std::vector<Real> w(std::size_t{layer.spec.out_channels} * taps);
  for (const auto& g : layer.groups) {
    for (std::size_t slot = 0; slot < g.members.size(); ++slot) {
      for (std::size_t p = 0; p < taps; ++p) w[g.members[slot] * taps + p] = g.centroid(slot, g.index_map[p]);
    }
  }
  return DenseFilterBank<Real>(layer.spec, std::move(w));
}

/// Accumulate-then-multiply convolution.
///
/// Per output pixel and pattern group the window inputs are summed into G
/// cluster sums (one add per tap, taps visited kx-major then ky then
/// in_channel), then every member channel takes G multiply-adds.
template <typename Real>
Tensor3<Real> clustered_conv2d(const Tensor3<Real>& input, const ClusteredLayer<Real>& layer,
                               OpCounter* counter = nullptr) {
  layer.validate();
  const ConvLayerSpec& s = layer.spec;
  check_input_shape(input, s);
  const std::size_t oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  std::vector<Real> out(oh * ow * s.out_channels);
  std::vector<accum_t> sums(layer.clusters);
  OpCounter local;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
      const auto x0 = static_cast<std::ptrdiff_t>(ox * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
      for (const auto& g : layer.groups) {
        std::fill(sums.begin(), sums.end(), accum_t{0});
        for (std::size_t kx = 0; kx < k; ++kx) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
              const std::size_t tap = (ky * k + kx) * s.in_channels + ci;
              sums[g.index_map[tap]] +=
                  input.padded(y0 + static_cast<std::ptrdiff_t>(ky), x0 + static_cast<std::ptrdiff_t>(kx), ci);
              ++local.adds;
            }
          }
        }
        for (std::size_t slot = 0; slot < g.members.size(); ++slot) {
          accum_t acc = 0;
          for (std::size_t c = 0; c < g.cluster_count; ++c) {
            acc += static_cast<accum_t>(g.centroid(slot, c)) * sums[c];
            ++local.multiplies;
            ++local.adds;
          }
          out[(oy * ow + ox) * s.out_channels + g.members[slot]] = static_cast<Real>(acc);
        }
      }
    }
  }
  if (counter) *counter += local;
  return Tensor3<Real>(oh, ow, s.out_channels, std::move(out));
}

/// Closed-form cost of a clustered layer with `group_size` channels per
/// pattern group (0 means one group for the whole layer).
inline CostRecord clustered_cost(const ConvLayerSpec& spec, std::size_t groups, std::size_t group_size = 0) {
  spec.validate();
  if (groups < 1 || groups > kMaxClusters) throw ConfigError("G must be in [1, 16]");
  const std::uint64_t out = spec.out_channels;
  if (group_size == 0 || group_size > out) group_size = out;
  const std::uint64_t pattern_groups = (out + group_size - 1) / group_size;
  const std::uint64_t pixels = spec.out_pixels();
  CostRecord r;
  r.multiplies = groups * out * pixels;
  r.adds = spec.taps() * pixels * pattern_groups + groups * out * pixels;
  r.index_params = spec.taps() * pattern_groups;
  r.centroid_params = groups * out;
  r.bytes_params = static_cast<double>(r.index_params) * kIndexBytes +
                   static_cast<double>(r.centroid_params) * kWeightBytes;
  return r;
}

/// Cost of an already-clustered layer, read from its actual groups.
template <typename Real>
CostRecord clustered_cost(const ClusteredLayer<Real>& layer) {
  layer.validate();
  const std::uint64_t pixels = layer.spec.out_pixels();
  const std::uint64_t out = layer.spec.out_channels;
  const std::uint64_t pattern_groups = layer.groups.size();
  CostRecord r;
  r.multiplies = std::uint64_t{layer.clusters} * out * pixels;
  r.adds = layer.spec.taps() * pixels * pattern_groups + r.multiplies;
  r.index_params = layer.spec.taps() * pattern_groups;
  r.centroid_params = std::uint64_t{layer.clusters} * out;
  r.bytes_params = static_cast<double>(r.index_params) * kIndexBytes +
                   static_cast<double>(r.centroid_params) * kWeightBytes;
  return r;
}

}  // namespace fhdnn
