#pragma once

// Cycle-approximate model of the clustered-convolution PE array.
//
// Array: `rows` x `cols` PEs. A PE row shares one input-pixel bus and works on
// one output row; a PE column shares one index/centroid bus and works on one
// pattern group (all of the group's member channels). Layers are processed
// tile by tile, a tile being rows output rows x cols pattern groups.
//
// Inside a PE (3x3 kernels only):
//   * the input bus streams the padded input columns left to right; for each
//     column the three vertically offset rows are streamed (ky-major, then
//     in_channel), one word per cycle. Padding words are driven as zeros.
//   * every word is added into the cluster slot of each window that covers
//     it; three accumulation register files hold the three windows in flight.
//   * a finished window moves to the fourth (multiply) register file, which
//     spends one cycle per centroid multiply-add (G per member channel) while
//     accumulation continues. If no accumulation RF is free when a new
//     window starts, the input stream stalls.
//
// Cycle accounting: one bus word = one cycle, one multiply-add = one cycle,
// register-file reads/writes are free. PEs of a tile run in lockstep, so a
// tile costs as long as its slowest column.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fhdnn/errors.hpp"
#include "fhdnn/tensor.hpp"
#include "fhdnn/wclust.hpp"

namespace fhdnn::pesim {

struct ArrayConfig {
  std::size_t rows = 4;
  std::size_t cols = 16;
  std::size_t rf_groups = 16;       ///< cluster slots per register file
  std::size_t accum_rfs_per_pe = 3;
  std::size_t mult_rfs_per_pe = 1;

  void validate() const {
    if (rows < 1 || cols < 1) throw ConfigError("PE array needs at least one row and one column");
    if (accum_rfs_per_pe != 3) throw ConfigError("each PE has exactly 3 accumulation register files");
    if (mult_rfs_per_pe != 1) throw ConfigError("each PE has exactly 1 multiply register file");
    if (rf_groups < 1 || rf_groups > kMaxClusters) throw ConfigError("rf_groups must be in [1, 16]");
  }
};

struct TileAssignment {
  std::size_t first_row = 0;
  std::size_t row_count = 0;
  std::size_t first_group = 0;
  std::size_t group_count = 0;
};

struct LayerSchedule {
  ConvLayerSpec spec;
  std::uint32_t clusters = 0;
  std::vector<std::size_t> group_members;  ///< member-channel count of each pattern group
  std::size_t row_tiles = 0;
  std::size_t col_tiles = 0;
  std::vector<TileAssignment> tiles;       ///< row-tile major
};

struct SimReport {
  std::uint64_t cycles = 0;
  std::uint64_t input_bus_words = 0;
  std::uint64_t weight_bus_words = 0;
  std::uint64_t accum_ops = 0;  ///< every add: register-file accumulations plus multiply-adds
  std::uint64_t mult_ops = 0;
  double pe_utilization = 0.0;
  double overlap_efficiency = 0.0;

  std::uint64_t rf_accumulations = 0;
  std::uint64_t accumulate_cycles = 0;  ///< input-stream length summed over tiles
  std::uint64_t multiply_cycles = 0;    ///< multiply-stream length summed over tiles
  std::uint64_t stall_cycles = 0;
  std::size_t tiles = 0;
};

/// One simulator event, reported only when an event sink is attached.
struct SimEvent {
  enum class Kind { kBroadcast, kAccumulate, kMultiply };
  Kind kind = Kind::kBroadcast;
  std::size_t tile = 0;
  std::size_t pe_row = 0;
  std::size_t pe_col = 0;  ///< unused for broadcasts (the bus spans the row)
  std::ptrdiff_t in_y = 0, in_x = 0;  ///< padded input coordinate (broadcast/accumulate)
  std::size_t channel = 0;            ///< input channel, or output channel for multiplies
  std::size_t out_y = 0, out_x = 0;   ///< window (accumulate/multiply)
  std::size_t cluster = 0;
};

using EventSink = std::function<void(const SimEvent&)>;

/// Tiles output rows over PE rows and pattern groups over PE columns.
inline LayerSchedule schedule_layer(const ConvLayerSpec& spec, std::vector<std::size_t> group_members,
                                    std::size_t clusters, const ArrayConfig& cfg = {}) {
  spec.validate();
  cfg.validate();
  if (spec.kernel != 3) {
    throw ShapeError("PE array supports 3x3 kernels only (kernel " + std::to_string(spec.kernel) +
                     "); use clustered_conv2d for other shapes");
  }
  if (clusters < 1 || clusters > cfg.rf_groups) {
    throw ConfigError("G = " + std::to_string(clusters) + " exceeds the register-file capacity " +
                      std::to_string(cfg.rf_groups));
  }
  std::size_t total = 0;
  for (const auto m : group_members) {
    if (m == 0) throw IntegrityError("empty pattern group in schedule");
    total += m;
  }
  if (total != spec.out_channels) throw IntegrityError("pattern groups do not cover the output channels");

  LayerSchedule s;
  s.spec = spec;
  s.clusters = static_cast<std::uint32_t>(clusters);
  s.group_members = std::move(group_members);
  const std::size_t oh = spec.out_height();
  const std::size_t ng = s.group_members.size();
  s.row_tiles = (oh + cfg.rows - 1) / cfg.rows;
  s.col_tiles = (ng + cfg.cols - 1) / cfg.cols;
  for (std::size_t rt = 0; rt < s.row_tiles; ++rt) {
    for (std::size_t ct = 0; ct < s.col_tiles; ++ct) {
      TileAssignment t;
      t.first_row = rt * cfg.rows;
      t.row_count = std::min(cfg.rows, oh - t.first_row);
      t.first_group = ct * cfg.cols;
      t.group_count = std::min(cfg.cols, ng - t.first_group);
      s.tiles.push_back(t);
    }
  }
  return s;
}

/// Schedule for `group_size` consecutive channels per pattern group (0 = whole layer in one group).
inline LayerSchedule schedule_layer(const ConvLayerSpec& spec, std::size_t clusters, std::size_t group_size,
                                    const ArrayConfig& cfg = {}) {
  spec.validate();
  const std::size_t out = spec.out_channels;
  if (group_size == 0 || group_size > out) group_size = out;
  std::vector<std::size_t> members;
  for (std::size_t first = 0; first < out; first += group_size) members.push_back(std::min(group_size, out - first));
  return schedule_layer(spec, std::move(members), clusters, cfg);
}

template <typename Real>
LayerSchedule schedule_layer(const ClusteredLayer<Real>& layer, const ArrayConfig& cfg = {}) {
  layer.validate();
  std::vector<std::size_t> members;
  for (const auto& g : layer.groups) members.push_back(g.members.size());
  return schedule_layer(layer.spec, std::move(members), layer.clusters, cfg);
}

namespace detail {

// Timeline of one PE processing one output row: returns (cycles, stall cycles).
struct RowTiming {
  std::uint64_t cycles = 0;
  std::uint64_t stalls = 0;
};

inline RowTiming time_row(std::size_t windows, std::size_t stride, std::size_t kernel, std::uint64_t words_per_column,
                          std::uint64_t mult_per_window, std::size_t accum_rfs) {
  const std::size_t columns = (windows - 1) * stride + kernel;
  std::uint64_t t = 0, mult_free = 0, stalls = 0;
  std::deque<std::uint64_t> done;  // completion times of windows not yet moved to the multiply RF
  std::size_t in_flight = 0, next_start = 0, next_done = 0;
  auto transfer_oldest = [&] {
    const std::uint64_t start = std::max(done.front(), mult_free);
    done.pop_front();
    mult_free = start + mult_per_window;
    --in_flight;
    return start;
  };
  for (std::size_t col = 0; col < columns; ++col) {
    while (next_start < windows && next_start * stride == col) {
      while (in_flight == accum_rfs) {
        const std::uint64_t freed = transfer_oldest();
        if (freed > t) {
          stalls += freed - t;
          t = freed;
        }
      }
      ++in_flight;
      ++next_start;
    }
    t += words_per_column;
    while (next_done < windows && next_done * stride + kernel - 1 == col) {
      done.push_back(t);
      ++next_done;
    }
  }
  while (!done.empty()) transfer_oldest();
  return {std::max(t, mult_free), stalls};
}

template <typename Real>
struct ValueTracker {
  const ClusteredLayer<Real>* layer = nullptr;
  const Tensor3<Real>* input = nullptr;
  std::vector<Real>* output = nullptr;
};

}  // namespace detail

/// Runs the schedule. With `tracker` set, the PE datapath is also evaluated on
/// real values; with `sink` set, every bus broadcast, register-file
/// accumulation and multiply is reported.
template <typename Real = float>
SimReport run_schedule(const LayerSchedule& sched, const ArrayConfig& cfg,
                       const detail::ValueTracker<Real>& tracker = {}, const EventSink& sink = {}) {
  cfg.validate();
  const ConvLayerSpec& s = sched.spec;
  const std::size_t k = s.kernel, stride = s.stride, cin = s.in_channels;
  const std::size_t ow = s.out_width();
  const std::size_t G = sched.clusters;
  const std::size_t columns = (ow - 1) * stride + k;
  const std::uint64_t words_per_column = std::uint64_t{k} * cin;
  const std::uint64_t words_per_row = columns * words_per_column;
  const bool detailed = tracker.layer != nullptr || static_cast<bool>(sink);

  SimReport rep;
  rep.tiles = sched.tiles.size();
  std::uint64_t active_slots = 0;
  std::vector<accum_t> sums;
  for (std::size_t ti = 0; ti < sched.tiles.size(); ++ti) {
    const TileAssignment& tile = sched.tiles[ti];
    std::size_t max_members = 0;
    for (std::size_t c = 0; c < tile.group_count; ++c) {
      const std::size_t members = sched.group_members[tile.first_group + c];
      max_members = std::max(max_members, members);
      rep.weight_bus_words += words_per_row + std::uint64_t{ow} * G * members;
      for (std::size_t r = 0; r < tile.row_count; ++r) {
        rep.rf_accumulations += std::uint64_t{ow} * k * k * cin;
        rep.mult_ops += std::uint64_t{ow} * G * members;
      }
    }
    rep.input_bus_words += words_per_row * tile.row_count;
    active_slots += tile.row_count * tile.group_count;

    const std::uint64_t mult_per_window = std::uint64_t{G} * max_members;
    const auto timing = detail::time_row(ow, stride, k, words_per_column, mult_per_window, cfg.accum_rfs_per_pe);
    rep.cycles += timing.cycles;
    rep.stall_cycles += timing.stalls;
    rep.accumulate_cycles += words_per_row;
    rep.multiply_cycles += std::uint64_t{ow} * mult_per_window;

    if (!detailed) continue;
    // Event-level walk of the same stream: PE (r, c) handles output row
    // first_row + r and pattern group first_group + c.
    for (std::size_t r = 0; r < tile.row_count; ++r) {
      const std::size_t oy = tile.first_row + r;
      const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(s.padding);
      if (sink) {
        for (std::size_t col = 0; col < columns; ++col)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t ci = 0; ci < cin; ++ci) {
              SimEvent e;
              e.kind = SimEvent::Kind::kBroadcast;
              e.tile = ti;
              e.pe_row = r;
              e.in_y = y0 + static_cast<std::ptrdiff_t>(ky);
              e.in_x = static_cast<std::ptrdiff_t>(col) - static_cast<std::ptrdiff_t>(s.padding);
              e.channel = ci;
              sink(e);
            }
      }
      for (std::size_t c = 0; c < tile.group_count; ++c) {
        const std::size_t gi = tile.first_group + c;
        const PatternGroup<Real>* group = tracker.layer ? &tracker.layer->groups[gi] : nullptr;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          if (group) sums.assign(G, accum_t{0});
          // Words of window ox arrive column by column (kx), then ky, then channel.
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t col = ox * stride + kx;
            const auto x = static_cast<std::ptrdiff_t>(col) - static_cast<std::ptrdiff_t>(s.padding);
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t tap = (ky * k + kx) * cin + ci;
                std::size_t cluster = 0;
                if (group) {
                  cluster = group->index_map[tap];
                  sums[cluster] += tracker.input->padded(y0 + static_cast<std::ptrdiff_t>(ky), x, ci);
                }
                if (sink) {
                  SimEvent e;
                  e.kind = SimEvent::Kind::kAccumulate;
                  e.tile = ti;
                  e.pe_row = r;
                  e.pe_col = c;
                  e.in_y = y0 + static_cast<std::ptrdiff_t>(ky);
                  e.in_x = x;
                  e.channel = ci;
                  e.out_y = oy;
                  e.out_x = ox;
                  e.cluster = cluster;
                  sink(e);
                }
              }
            }
          }
          const std::size_t members = sched.group_members[gi];
          for (std::size_t slot = 0; slot < members; ++slot) {
            accum_t acc = 0;
            for (std::size_t g = 0; g < G; ++g) {
              if (group) acc += static_cast<accum_t>(group->centroid(slot, g)) * sums[g];
              if (sink) {
                SimEvent e;
                e.kind = SimEvent::Kind::kMultiply;
                e.tile = ti;
                e.pe_row = r;
                e.pe_col = c;
                e.channel = group ? group->members[slot] : slot;
                e.out_y = oy;
                e.out_x = ox;
                e.cluster = g;
                sink(e);
              }
            }
            if (group) (*tracker.output)[(oy * ow + ox) * s.out_channels + group->members[slot]] = static_cast<Real>(acc);
          }
        }
      }
    }
  }
  rep.accum_ops = rep.rf_accumulations + rep.mult_ops;
  const std::uint64_t slots =
      std::uint64_t{sched.row_tiles} * cfg.rows * sched.col_tiles * cfg.cols;
  rep.pe_utilization = slots ? static_cast<double>(active_slots) / static_cast<double>(slots) : 0.0;
  const std::uint64_t shorter = std::min(rep.accumulate_cycles, rep.multiply_cycles);
  if (shorter == 0) {
    rep.overlap_efficiency = 1.0;
  } else {
    const double hidden = static_cast<double>(rep.accumulate_cycles + rep.multiply_cycles) -
                          static_cast<double>(rep.cycles);
    rep.overlap_efficiency = std::clamp(hidden / static_cast<double>(shorter), 0.0, 1.0);
  }
  return rep;
}

/// Counter-only simulation.
inline SimReport simulate(const LayerSchedule& sched, const ArrayConfig& cfg = {}) {
  return run_schedule<float>(sched, cfg);
}

template <typename Real>
struct TrackedRun {
  SimReport report;
  Tensor3<Real> output;
};

/// Simulation with value tracking: also returns the output feature map the PE datapath computes.
template <typename Real>
TrackedRun<Real> simulate_values(const ClusteredLayer<Real>& layer, const Tensor3<Real>& input,
                                 const ArrayConfig& cfg = {}, const EventSink& sink = {}) {
  const LayerSchedule sched = schedule_layer(layer, cfg);
  check_input_shape(input, layer.spec);
  std::vector<Real> out(layer.spec.out_pixels() * layer.spec.out_channels, Real{0});
  detail::ValueTracker<Real> tracker{&layer, &input, &out};
  SimReport rep = run_schedule<Real>(sched, cfg, tracker, sink);
  return {rep, Tensor3<Real>(layer.spec.out_height(), layer.spec.out_width(), layer.spec.out_channels, std::move(out))};
}

}  // namespace fhdnn::pesim
