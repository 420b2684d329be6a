#include <gtest/gtest.h>

#include <random>

#include "fhdnn/vgg16.hpp"
#include "fhdnn/wclust.hpp"
#include "support/oracles.hpp"

using namespace fhdnn;

namespace {

DenseFilterBank<float> random_bank(std::mt19937_64& rng, const ConvLayerSpec& spec, bool integers = false) {
  const std::size_t n = std::size_t{spec.out_channels} * spec.taps();
  return DenseFilterBank<float>(spec, integers ? oracle::random_integers(rng, n, -4, 4) : oracle::random_floats(rng, n));
}

Tensor3<float> random_input(std::mt19937_64& rng, const ConvLayerSpec& spec, bool integers = false) {
  const std::size_t n = std::size_t{spec.in_height} * spec.in_width * spec.in_channels;
  return Tensor3<float>(spec.in_height, spec.in_width, spec.in_channels,
                        integers ? oracle::random_integers(rng, n, -8, 8) : oracle::random_floats(rng, n));
}

std::vector<double> as_doubles(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Kmeans1d, TwoObviousClusters) {
  const std::vector<double> w{1.0, 1.1, 5.0, 5.2};
  for (const auto method : {KMeansMethod::kOptimal, KMeansMethod::kLloyd}) {
    const auto c = kmeans_1d(w, 2, method);
    ASSERT_EQ(c.centroids.size(), 2u);
    EXPECT_NEAR(c.centroids[0], 1.05, 1e-12);
    EXPECT_NEAR(c.centroids[1], 5.1, 1e-12);
    EXPECT_EQ(c.index, (std::vector<std::uint8_t>{0, 0, 1, 1}));
    EXPECT_NEAR(clustering_error(w, c), oracle::exhaustive_min_sse(w, 2), 1e-12);
  }
}

TEST(Kmeans1d, ConstantWeightsCollapseToOneCentroid) {
  const std::vector<double> w(9, 0.7);
  const auto c = kmeans_1d(w, 4);
  ASSERT_EQ(c.centroids.size(), 1u);
  EXPECT_DOUBLE_EQ(c.centroids[0], 0.7);
  for (auto i : c.index) EXPECT_EQ(i, 0);
}

TEST(Kmeans1d, SixteenDistinctValuesAreExact) {
  std::mt19937_64 rng(3);
  const auto w = as_doubles(oracle::random_floats(rng, 16));
  const auto c = kmeans_1d(w, 16);
  EXPECT_EQ(c.centroids.size(), 16u);
  EXPECT_EQ(clustering_error(w, c), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(c.centroids[c.index[i]], w[i]);
}

TEST(Kmeans1d, RejectsBadGroupCount) {
  const std::vector<double> w{1.0};
  EXPECT_THROW(kmeans_1d(w, 0), ConfigError);
  EXPECT_THROW(kmeans_1d(w, 17), ConfigError);
  EXPECT_THROW(kmeans_1d(std::span<const double>{}, 2), ShapeError);
}

TEST(Kmeans1d, TiesGoToLowerCentroid) {
  // Lloyd from quantile seeds {0, 2} assigns the midpoint 1 to the lower cluster.
  const std::vector<double> w{0.0, 1.0, 2.0};
  const auto c = kmeans_1d(w, 2, KMeansMethod::kLloyd);
  EXPECT_EQ(c.index[1], 0);
}

TEST(Kmeans1d, OptimalMatchesExhaustiveSearch) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = len(rng);
    const std::size_t groups = 1 + trial % 3;
    if (n > 10 && groups == 3) continue;  // 3^12 labelings is slow; 3^10 is fine
    const auto w = as_doubles(oracle::random_floats(rng, n));
    const auto c = kmeans_1d(w, groups);
    EXPECT_NEAR(clustering_error(w, c), oracle::exhaustive_min_sse(w, groups), 1e-9) << "trial " << trial;
  }
}

TEST(Kmeans1d, ErrorIsMonotoneInGroupCount) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const auto w = as_doubles(oracle::random_floats(rng, 36));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t g = 1; g <= kMaxClusters; ++g) {
      const double e = clustering_error(w, kmeans_1d(w, g));
      EXPECT_LE(e, prev + 1e-12) << "G=" << g;
      prev = e;
    }
  }
}

TEST(Kmeans1d, CentroidsAscendAndAreClusterMeans) {
  std::mt19937_64 rng(23);
  const auto w = as_doubles(oracle::random_floats(rng, 72));
  const auto c = kmeans_1d(w, 8);
  EXPECT_TRUE(std::is_sorted(c.centroids.begin(), c.centroids.end()));
  for (std::size_t g = 0; g < c.centroids.size(); ++g) {
    double s = 0;
    int n = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (c.index[i] == g) s += w[i], ++n;
    ASSERT_GT(n, 0);
    EXPECT_NEAR(c.centroids[g], s / n, 1e-12);
  }
}

TEST(SharePatterns, GroupSizeOneMatchesPerFilterClustering) {
  std::mt19937_64 rng(31);
  const ConvLayerSpec spec{2, 4, 3, 1, 1, 4, 4};
  const auto bank = random_bank(rng, spec);
  const auto layer = share_patterns(bank, 4, 1);
  ASSERT_EQ(layer.groups.size(), 4u);
  const auto rebuilt = expand(layer);
  for (std::size_t o = 0; o < 4; ++o) {
    const auto w = as_doubles(bank.channel(o));
    const double want = clustering_error(w, cluster_filter(bank.channel(o), 4));
    double got = 0;
    for (std::size_t p = 0; p < w.size(); ++p) {
      const double d = w[p] - static_cast<double>(rebuilt.channel(o)[p]);
      got += d * d;
    }
    EXPECT_NEAR(got, want, 1e-6);
  }
}

TEST(SharePatterns, IdenticalChannelsReconstructExactly) {
  const ConvLayerSpec spec{1, 3, 3, 1, 0, 3, 3};
  std::vector<float> w;
  for (int o = 0; o < 3; ++o)
    for (int p = 0; p < 9; ++p) w.push_back(static_cast<float>(p % 4));
  const DenseFilterBank<float> bank(spec, w);
  const auto layer = share_patterns(bank, 4);
  ASSERT_EQ(layer.groups.size(), 1u);
  EXPECT_EQ(expand(layer), bank);
}

TEST(SharePatterns, TwoPositionScaledPair) {
  const ConvLayerSpec spec{2, 2, 1, 1, 0, 1, 1};
  const DenseFilterBank<float> bank(spec, {1.f, 2.f, 10.f, 20.f});
  const auto layer = share_patterns(bank, 2);
  ASSERT_EQ(layer.groups.size(), 1u);
  const auto& g = layer.groups[0];
  EXPECT_EQ(g.index_map, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(g.centroid(0, 0), 1.f);
  EXPECT_EQ(g.centroid(0, 1), 2.f);
  EXPECT_EQ(g.centroid(1, 0), 10.f);
  EXPECT_EQ(g.centroid(1, 1), 20.f);
  EXPECT_EQ(expand(layer), bank);
}

TEST(SharePatterns, LastGroupMayBeShorter) {
  std::mt19937_64 rng(32);
  const ConvLayerSpec spec{1, 5, 3, 1, 1, 3, 3};
  const auto layer = share_patterns(random_bank(rng, spec), 3, 2);
  ASSERT_EQ(layer.groups.size(), 3u);
  EXPECT_EQ(layer.groups[2].members, (std::vector<std::uint32_t>{4}));
  EXPECT_NO_THROW(layer.validate());
}

TEST(SharePatterns, EnoughClustersReproduceBank) {
  const ConvLayerSpec spec{1, 2, 3, 1, 0, 3, 3};
  std::vector<float> w;
  for (int o = 0; o < 2; ++o)
    for (int p = 0; p < 9; ++p) w.push_back(static_cast<float>((p % 3) * (o + 1)));
  const DenseFilterBank<float> bank(spec, w);
  EXPECT_EQ(expand(share_patterns(bank, 3, 1)), bank);
}

TEST(ClusteredConv, SingleClusterIsScaledWindowSum) {
  const ConvLayerSpec spec{2, 1, 3, 1, 1, 3, 3};
  ClusteredLayer<float> layer{spec, 1, {PatternGroup<float>{std::vector<std::uint8_t>(18, 0), {0}, {0.5f}, 1}}};
  std::vector<float> in(18);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<float>(i);
  const Tensor3<float> x(3, 3, 2, in);
  const auto y = clustered_conv2d(x, layer);
  const auto dense = dense_conv2d(x, DenseFilterBank<float>(spec, std::vector<float>(18, 0.5f)));
  EXPECT_EQ(y, dense);
  // Centre pixel sees every input: 0.5 * sum(0..17).
  EXPECT_EQ(y(1, 1, 0), 0.5f * 153.f);
}

TEST(ClusteredConv, EquivalentToDenseOfExpansion) {
  std::mt19937_64 rng(41);
  const ConvLayerSpec spec{4, 8, 3, 1, 1, 8, 8};
  const auto layer = share_patterns(random_bank(rng, spec), 8, 4);
  const auto x = random_input(rng, spec);
  const auto y = clustered_conv2d(x, layer);
  const auto want = dense_conv2d(x, expand(layer));
  EXPECT_LT(oracle::max_relative_error(y.data(), as_doubles(want.data())), 1e-5);
}

TEST(ClusteredConv, RandomLayersMatchNaiveOracle) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::uint32_t> cin(1, 6), cout(1, 10), size(3, 9), g(1, 16), gs(0, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::uint32_t k = trial % 3 == 0 ? 5 : 3, pad = trial % 2;
    const ConvLayerSpec spec{cin(rng), cout(rng), k, 1, pad, size(rng) + 2, size(rng) + 2};
    const auto layer = share_patterns(random_bank(rng, spec), g(rng), gs(rng));
    const auto x = random_input(rng, spec);
    const auto expanded = expand(layer);
    const auto want = oracle::naive_conv(x.data(), expanded.weights(),
                                         {spec.in_height, spec.in_width, spec.in_channels, spec.out_channels, k, 1, pad});
    EXPECT_LT(oracle::max_relative_error(clustered_conv2d(x, layer).data(), want), 1e-5) << "trial " << trial;
  }
}

TEST(ClusteredConv, IntegerDataIsExact) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const ConvLayerSpec spec{3, 6, 3, 1, 1, 6, 6};
    // Integer weights with at most 9 distinct values and G = 16: centroids are the integers themselves.
    const auto layer = share_patterns(random_bank(rng, spec, true), 16, 1);
    const auto x = random_input(rng, spec, true);
    EXPECT_EQ(clustered_conv2d(x, layer), dense_conv2d(x, expand(layer)));
  }
}

TEST(ClusteredConv, IntegrityErrors) {
  const ConvLayerSpec spec{1, 2, 1, 1, 0, 2, 2};
  ClusteredLayer<float> bad_index{spec, 2, {PatternGroup<float>{{2}, {0, 1}, {1, 2, 3, 4}, 2}}};
  EXPECT_THROW(clustered_conv2d(Tensor3<float>(2, 2, 1), bad_index), IntegrityError);
  ClusteredLayer<float> missing{spec, 2, {PatternGroup<float>{{1}, {0}, {1, 2}, 2}}};
  EXPECT_THROW(missing.validate(), IntegrityError);
  ClusteredLayer<float> dup{spec, 1, {PatternGroup<float>{{0}, {0, 0}, {1, 2}, 1}}};
  EXPECT_THROW(dup.validate(), IntegrityError);
}

TEST(ClusteredCost, CountersMatchClosedForm) {
  std::mt19937_64 rng(51);
  for (const auto& [spec, groups, gs] : std::vector<std::tuple<ConvLayerSpec, std::size_t, std::size_t>>{
           {{64, 64, 3, 1, 1, 4, 4}, 16, 0},
           {{8, 32, 3, 1, 1, 8, 8}, 8, 4},
           {{3, 5, 5, 2, 2, 9, 9}, 4, 2},
           {{2, 7, 3, 1, 0, 5, 6}, 1, 3},
           {{4, 4, 1, 1, 0, 3, 3}, 3, 1}}) {
    const auto layer = share_patterns(random_bank(rng, spec), groups, gs);
    OpCounter counter;
    clustered_conv2d(random_input(rng, spec), layer, &counter);
    const auto closed = clustered_cost(spec, groups, gs);
    EXPECT_EQ(counter.multiplies, closed.multiplies);
    EXPECT_EQ(counter.adds, closed.adds);
    EXPECT_EQ(clustered_cost(layer), closed);
  }
}

TEST(ClusteredCost, MultiplyReductionAt64x64) {
  const ConvLayerSpec spec{64, 64, 3, 1, 1, 224, 224};
  const auto dense = dense_cost(spec);
  const auto clustered = clustered_cost(spec, 16, 64);
  EXPECT_EQ(dense.multiplies, 36 * clustered.multiplies);  // (9 * 64) / 16
  // Combined ops: 2*9*64*64*P over (9*64*P + 2*16*64*P).
  const double want = (2.0 * 9 * 64 * 64) / (9.0 * 64 + 2.0 * 16 * 64);
  EXPECT_DOUBLE_EQ(static_cast<double>(dense.ops()) / static_cast<double>(clustered.ops()), want);
}

TEST(ClusteredCost, GEqualToTapsGivesDenseMultiplies) {
  // G is capped at 16, so use a 1x1 kernel with 16 input channels.
  const ConvLayerSpec spec{16, 4, 1, 1, 0, 5, 5};
  EXPECT_EQ(clustered_cost(spec, 16, 1).multiplies, dense_cost(spec).multiplies);
  EXPECT_LT(clustered_cost(spec, 8, 1).multiplies, dense_cost(spec).multiplies);
}

TEST(ClusteredCost, ParamsBytesArithmetic) {
  const ConvLayerSpec spec{8, 32, 3, 1, 1, 8, 8};
  const auto c = clustered_cost(spec, 16, 4);
  EXPECT_EQ(c.index_params, 72u * 8);
  EXPECT_EQ(c.centroid_params, 16u * 32);
  EXPECT_DOUBLE_EQ(c.bytes_params, 72.0 * 8 * 0.5 + 16.0 * 32 * 2);
  EXPECT_DOUBLE_EQ(dense_cost(spec).bytes_params, 72.0 * 32 * 2);
}

TEST(ClusteredCost, Vgg16Totals) {
  // Reference values computed independently from the layer table.
  const auto full = cost_table(vgg16_conv_layers(), 16);
  EXPECT_NEAR(full.ops_reduction(), 59.56879929886065, 1e-9);
  EXPECT_NEAR(full.params_reduction(), 193.7046525178506, 1e-9);
  EXPECT_NEAR(full.multiply_reduction(), 70.8, 1e-12);
  const auto per_channel = cost_table(vgg16_conv_layers(), 16, 1);
  EXPECT_NEAR(per_channel.ops_reduction(), 1.945054945054945, 1e-9);
  EXPECT_NEAR(per_channel.params_reduction(), 3.927818007049023, 1e-9);
}

TEST(Lloyd, MatchesOptimalOnWellSeparatedData) {
  const std::vector<double> w{-3, -2.9, -3.1, 0, 0.1, -0.1, 4, 4.2, 3.8};
  const auto a = kmeans_1d(w, 3, KMeansMethod::kLloyd);
  const auto b = kmeans_1d(w, 3, KMeansMethod::kOptimal);
  EXPECT_EQ(a.index, b.index);
  EXPECT_NEAR(clustering_error(w, a), oracle::exhaustive_min_sse(w, 3), 1e-12);
}

TEST(Lloyd, NeverBeatsOptimal) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = as_doubles(oracle::random_floats(rng, 27));
    const std::size_t g = 2 + trial % 6;
    EXPECT_LE(clustering_error(w, kmeans_1d(w, g)), clustering_error(w, kmeans_1d(w, g, KMeansMethod::kLloyd)) + 1e-12);
  }
}
