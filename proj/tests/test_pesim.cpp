#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <tuple>

#include "fhdnn/pesim.hpp"
#include "support/oracles.hpp"

using namespace fhdnn;
using pesim::ArrayConfig;
using pesim::SimEvent;

namespace {

ClusteredLayer<float> random_layer(std::mt19937_64& rng, const ConvLayerSpec& spec, std::size_t groups,
                                   std::size_t group_size) {
  const DenseFilterBank<float> bank(spec, oracle::random_floats(rng, std::size_t{spec.out_channels} * spec.taps()));
  return share_patterns(bank, groups, group_size);
}

Tensor3<float> random_input(std::mt19937_64& rng, const ConvLayerSpec& spec) {
  return Tensor3<float>(spec.in_height, spec.in_width, spec.in_channels,
                        oracle::random_floats(rng, std::size_t{spec.in_height} * spec.in_width * spec.in_channels));
}

}  // namespace

TEST(Schedule, PerfectTilingIsFullyUtilized) {
  const ConvLayerSpec spec{4, 16, 3, 1, 1, 4, 16};
  const auto rep = pesim::simulate(pesim::schedule_layer(spec, 4, 1));
  EXPECT_DOUBLE_EQ(rep.pe_utilization, 1.0);
  EXPECT_EQ(rep.tiles, 1u);
}

TEST(Schedule, FiveRowsLeaveLastTileHalfIdle) {
  const ConvLayerSpec spec{4, 16, 3, 1, 1, 5, 16};
  const auto sched = pesim::schedule_layer(spec, 4, 1);
  EXPECT_EQ(sched.row_tiles, 2u);
  EXPECT_DOUBLE_EQ(pesim::simulate(sched).pe_utilization, 5.0 / 8.0);
}

TEST(Schedule, UtilizationIsOneOnlyForExactFits) {
  for (std::uint32_t oh = 1; oh <= 9; ++oh)
    for (std::uint32_t out = 8; out <= 40; out += 8) {
      const ConvLayerSpec spec{1, out, 3, 1, 1, oh, 4};
      const double u = pesim::simulate(pesim::schedule_layer(spec, 2, 1)).pe_utilization;
      EXPECT_GT(u, 0.0);
      EXPECT_LE(u, 1.0);
      EXPECT_EQ(u == 1.0, oh % 4 == 0 && out % 16 == 0) << oh << " " << out;
    }
}

TEST(Schedule, RejectsNonThreeByThreeAndLargeG) {
  EXPECT_THROW(pesim::schedule_layer(ConvLayerSpec{1, 4, 5, 1, 2, 6, 6}, 4, 0), ShapeError);
  EXPECT_THROW(pesim::schedule_layer(ConvLayerSpec{1, 4, 1, 1, 0, 6, 6}, 4, 0), ShapeError);
  ArrayConfig small;
  small.rf_groups = 8;
  EXPECT_THROW(pesim::schedule_layer(ConvLayerSpec{1, 4, 3, 1, 1, 6, 6}, 16, 0, small), ConfigError);
}

TEST(Simulate, CountersReconcileWithClosedFormCost) {
  const ConvLayerSpec spec{8, 32, 3, 1, 1, 8, 8};
  for (const std::size_t gs : {0, 1, 4, 32}) {
    for (const std::size_t g : {1, 4, 16}) {
      const auto rep = pesim::simulate(pesim::schedule_layer(spec, g, gs));
      const auto cost = clustered_cost(spec, g, gs);
      EXPECT_EQ(rep.accum_ops, cost.adds);
      EXPECT_EQ(rep.mult_ops, cost.multiplies);
      EXPECT_EQ(rep.accum_ops + rep.mult_ops, cost.ops());
    }
  }
}

TEST(Simulate, ValueTrackingMatchesClusteredConvExactly) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<std::uint32_t> cin(1, 6), cout(1, 40), size(3, 11), g(1, 16), gs(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint32_t stride = 1 + trial % 2;
    const std::uint32_t pad = trial % 3 == 0 ? 0 : 1;
    std::uint32_t h = size(rng), w = size(rng);
    // keep (in + 2p - 3) divisible by the stride
    h += (h + 2 * pad - 3) % stride;
    w += (w + 2 * pad - 3) % stride;
    const ConvLayerSpec spec{cin(rng), cout(rng), 3, stride, pad, h, w};
    const auto layer = random_layer(rng, spec, g(rng), gs(rng));
    const auto x = random_input(rng, spec);
    const auto run = pesim::simulate_values(layer, x);
    EXPECT_EQ(run.output, clustered_conv2d(x, layer)) << "trial " << trial;
    const auto cost = clustered_cost(layer);
    EXPECT_EQ(run.report.accum_ops, cost.adds);
    EXPECT_EQ(run.report.mult_ops, cost.multiplies);
  }
}

TEST(Simulate, SingleClusterIsAccumulateBound) {
  const ConvLayerSpec spec{4, 3, 3, 1, 1, 8, 8};
  const auto sched = pesim::schedule_layer(spec, 1, 0);
  const auto rep = pesim::simulate(sched);
  EXPECT_EQ(rep.mult_ops, spec.out_pixels() * 3);  // one multiply per output pixel per channel
  EXPECT_GT(rep.accumulate_cycles, rep.multiply_cycles);
  EXPECT_EQ(rep.stall_cycles, 0u);
  EXPECT_GE(rep.cycles, rep.accumulate_cycles);
  // At most one window's multiplies (G * members = 3) drain after each tile's stream ends.
  EXPECT_LE(rep.cycles, rep.accumulate_cycles + 3 * rep.tiles);
}

TEST(Simulate, EqualStreamsOverlapStrictly) {
  // Per row: (4 + 2) columns * 3 * 2 channels = 36 words; 4 windows * 9 multiplies = 36.
  const ConvLayerSpec spec{2, 1, 3, 1, 1, 4, 4};
  const auto rep = pesim::simulate(pesim::schedule_layer(spec, 9, 0));
  ASSERT_EQ(rep.accumulate_cycles, rep.multiply_cycles);
  EXPECT_LT(rep.cycles, rep.accumulate_cycles + rep.multiply_cycles);
  EXPECT_GE(rep.cycles, rep.accumulate_cycles);
  EXPECT_GT(rep.overlap_efficiency, 0.0);
  EXPECT_LE(rep.overlap_efficiency, 1.0);
}

TEST(Simulate, MultiplyBoundLayerStalls) {
  const ConvLayerSpec spec{1, 16, 3, 1, 1, 4, 12};
  const auto rep = pesim::simulate(pesim::schedule_layer(spec, 16, 0));
  EXPECT_GT(rep.multiply_cycles, rep.accumulate_cycles);
  EXPECT_GT(rep.stall_cycles, 0u);
  EXPECT_GE(rep.cycles, rep.multiply_cycles);
}

TEST(Simulate, EventLogConservation) {
  std::mt19937_64 rng(72);
  const ConvLayerSpec spec{2, 3, 3, 1, 0, 6, 6};  // the 6x6x2 counting case
  const auto layer = random_layer(rng, spec, 4, 1);
  std::map<std::tuple<std::size_t, std::size_t, std::ptrdiff_t, std::ptrdiff_t, std::size_t>, int> broadcasts;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::ptrdiff_t, std::ptrdiff_t, std::size_t, std::size_t>,
           int>
      incidences;
  std::set<std::tuple<std::ptrdiff_t, std::ptrdiff_t, std::size_t>> tile_pixels;
  std::uint64_t multiplies = 0;
  const auto run = pesim::simulate_values(layer, random_input(rng, spec), {}, [&](const SimEvent& e) {
    switch (e.kind) {
      case SimEvent::Kind::kBroadcast:
        ++broadcasts[{e.tile, e.pe_row, e.in_y, e.in_x, e.channel}];
        tile_pixels.insert({e.in_y, e.in_x, e.channel});
        break;
      case SimEvent::Kind::kAccumulate:
        ++incidences[{e.tile, e.pe_row, e.pe_col, e.in_y, e.in_x, e.channel, e.out_x}];
        break;
      case SimEvent::Kind::kMultiply:
        ++multiplies;
        break;
    }
  });
  // Each PE row receives every pixel of its three input rows exactly once.
  for (const auto& [key, n] : broadcasts) EXPECT_EQ(n, 1);
  EXPECT_EQ(broadcasts.size(), run.report.input_bus_words);
  EXPECT_EQ(run.report.input_bus_words, 4u * 3 * 6 * 2);  // 4 PE rows x 3 rows x 6 columns x 2 channels
  // Across the tile the buses carry every input pixel: in_h * in_w * in_channels distinct words.
  EXPECT_EQ(tile_pixels.size(), 6u * 6 * 2);
  // Every (pixel, window) incidence accumulates exactly once per PE column.
  for (const auto& [key, n] : incidences) EXPECT_EQ(n, 1);
  EXPECT_EQ(incidences.size(), run.report.rf_accumulations);
  EXPECT_EQ(incidences.size(), spec.out_pixels() * 3 * spec.taps());
  EXPECT_EQ(multiplies, run.report.mult_ops);
}

TEST(Simulate, PaddingWordsAreBroadcast) {
  const ConvLayerSpec spec{1, 1, 3, 1, 1, 4, 4};
  std::uint64_t padded_words = 0;
  const ClusteredLayer<float> layer{spec, 1, {PatternGroup<float>{std::vector<std::uint8_t>(9, 0), {0}, {1.f}, 1}}};
  pesim::simulate_values(layer, Tensor3<float>(4, 4, 1), {}, [&](const SimEvent& e) {
    if (e.kind == SimEvent::Kind::kBroadcast && (e.in_y < 0 || e.in_x < 0 || e.in_y >= 4 || e.in_x >= 4)) ++padded_words;
  });
  // 4 PE rows x 6 columns x 3 rows = 72 words; the PE rows see 2, 3, 3, 2 in-image rows of 4 pixels.
  EXPECT_EQ(padded_words, 72u - (2 + 3 + 3 + 2) * 4);
}

TEST(Simulate, DeterministicAndBusCountsScaleWithTiles) {
  const ConvLayerSpec spec{3, 40, 3, 1, 1, 10, 10};
  const auto a = pesim::simulate(pesim::schedule_layer(spec, 8, 2));
  const auto b = pesim::simulate(pesim::schedule_layer(spec, 8, 2));
  EXPECT_EQ(a.cycles, b.cycles);
  EXPECT_EQ(a.tiles, 3u * 2);  // ceil(10/4) row tiles x ceil(20/16) column tiles
  const std::uint64_t words_per_row = 12u * 3 * 3;
  EXPECT_EQ(a.input_bus_words, words_per_row * 10 * 2);
}
