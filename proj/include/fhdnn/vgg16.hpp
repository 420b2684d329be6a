#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "fhdnn/cost.hpp"
#include "fhdnn/tensor.hpp"
#include "fhdnn/wclust.hpp"

namespace fhdnn {

struct NamedLayer {
  std::string_view name;
  ConvLayerSpec spec;
};

/// The 13 convolution layers of VGG16 on a 224x224x3 input (3x3, stride 1, padding 1).
inline std::vector<NamedLayer> vgg16_conv_layers() {
  struct Row {
    std::string_view name;
    std::uint32_t in, out, size;
  };
  constexpr std::array<Row, 13> rows{{
      {"conv1_1", 3, 64, 224},    {"conv1_2", 64, 64, 224},   {"conv2_1", 64, 128, 112},
      {"conv2_2", 128, 128, 112}, {"conv3_1", 128, 256, 56},  {"conv3_2", 256, 256, 56},
      {"conv3_3", 256, 256, 56},  {"conv4_1", 256, 512, 28},  {"conv4_2", 512, 512, 28},
      {"conv4_3", 512, 512, 28},  {"conv5_1", 512, 512, 14},  {"conv5_2", 512, 512, 14},
      {"conv5_3", 512, 512, 14},
  }};
  std::vector<NamedLayer> layers;
  for (const auto& r : rows) layers.push_back({r.name, ConvLayerSpec{r.in, r.out, 3, 1, 1, r.size, r.size}});
  return layers;
}

struct LayerCostRow {
  std::string_view name;
  CostRecord dense;
  CostRecord clustered;
};

struct CostTable {
  std::vector<LayerCostRow> layers;
  CostRecord dense_total;
  CostRecord clustered_total;

  double ops_reduction() const {
    return static_cast<double>(dense_total.ops()) / static_cast<double>(clustered_total.ops());
  }
  double multiply_reduction() const {
    return static_cast<double>(dense_total.multiplies) / static_cast<double>(clustered_total.multiplies);
  }
  double params_reduction() const { return dense_total.bytes_params / clustered_total.bytes_params; }
};

/// Dense vs clustered accounting over a layer stack; group_size 0 shares one pattern per layer.
inline CostTable cost_table(const std::vector<NamedLayer>& layers, std::size_t groups, std::size_t group_size = 0) {
  CostTable t;
  for (const auto& l : layers) {
    LayerCostRow row{l.name, dense_cost(l.spec), clustered_cost(l.spec, groups, group_size)};
    t.dense_total += row.dense;
    t.clustered_total += row.clustered;
    t.layers.push_back(row);
  }
  return t;
}

}  // namespace fhdnn
