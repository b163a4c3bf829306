#pragma once

// Shared builders for unit and acceptance tests: deterministic RNG helpers,
// synthetic networks (including a faithful ResNet50 geometry) and random
// latency grids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latprune/latency.hpp"
#include "latprune/net_model.hpp"
#include "latprune/solver.hpp"

namespace fixtures {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    unit() * static_cast<double>(hi - lo + 1));
  }
  double gauss() {  // Box-Muller
    double u1 = unit(), u2 = unit();
    while (u1 <= 0.0) u1 = unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793 * u2);
  }

 private:
  std::uint64_t state_;
};

// conv1 -> conv2 -> head, plain chain.
inline latprune::NetworkSpec chain3(int n1 = 16, int n2 = 32) {
  using namespace latprune;
  std::vector<LayerSpec> layers{
      {"conv1", n1, 3, 16, 16, true, 0},
      {"conv2", n2, 3, 8, 8, true, 0},
      {"head", 10, 1, 1, 1, false, 0},
  };
  std::vector<EdgeSpec> edges{{"conv1", "conv2", MergeKind::add},
                              {"conv2", "head", MergeKind::add}};
  return NetworkSpec(std::move(layers), std::move(edges), {}, 3);
}

// Residual-style fixture, 20 layers: conv1, two full stages of
// ds + 2 bottleneck blocks, one reduced stage of ds + 1 block, and a head.
// Stage trunks are coupled; block mid-layers require one kept group.
inline latprune::NetworkSpec resblock20() {
  using namespace latprune;
  std::vector<LayerSpec> layers;
  std::vector<EdgeSpec> edges;
  std::vector<CouplingGroup> couplings;

  layers.push_back({"conv1", 32, 3, 32, 32, true, 0});

  struct Stage {
    std::string name;
    int trunk;
    int inner;
    int blocks;
    int spatial;
  };
  const std::vector<Stage> stages{{"s1", 64, 32, 2, 16},
                                  {"s2", 128, 64, 2, 8},
                                  {"s3", 256, 128, 1, 4}};

  std::string trunk_in = "conv1";  // layer feeding the stage
  for (const auto& st : stages) {
    const std::string ds = st.name + "_ds";
    layers.push_back({ds, st.trunk, 1, st.spatial, st.spatial, true, 0});
    edges.push_back({trunk_in, ds, MergeKind::add});

    CouplingGroup trunk;
    trunk.member_layers.push_back(ds);

    std::string block_in = trunk_in;
    std::string prev_out = ds;
    for (int b = 1; b <= st.blocks; ++b) {
      const std::string base = st.name + "_b" + std::to_string(b);
      layers.push_back({base + "_c1", st.inner, 1, st.spatial, st.spatial,
                        true, 0});
      layers.push_back({base + "_c2", st.inner, 3, st.spatial, st.spatial,
                        true, 1});
      layers.push_back({base + "_c3", st.trunk, 1, st.spatial, st.spatial,
                        true, 0});
      if (b == 1) {
        edges.push_back({block_in, base + "_c1", MergeKind::add});
      } else {
        // residual join of the previous block output and the trunk
        edges.push_back({prev_out, base + "_c1", MergeKind::add});
        edges.push_back({ds, base + "_c1", MergeKind::add});
      }
      edges.push_back({base + "_c1", base + "_c2", MergeKind::add});
      edges.push_back({base + "_c2", base + "_c3", MergeKind::add});
      trunk.member_layers.push_back(base + "_c3");
      prev_out = base + "_c3";
    }
    couplings.push_back(std::move(trunk));
    trunk_in = prev_out;
  }

  layers.push_back({"head", 10, 1, 1, 1, false, 0});
  edges.push_back({trunk_in, "head", MergeKind::add});

  return NetworkSpec(std::move(layers), std::move(edges),
                     std::move(couplings), 3);
}

// Faithful ResNet50 geometry (stride in the 3x3 convolution; the classifier
// is modelled as a 1x1 layer on a 1x1 map).
inline latprune::NetworkSpec resnet50() {
  using namespace latprune;
  std::vector<LayerSpec> layers;
  std::vector<EdgeSpec> edges;
  std::vector<CouplingGroup> couplings;

  layers.push_back({"conv1", 64, 7, 112, 112, true, 0});

  struct Stage {
    std::string name;
    int inner;
    int trunk;
    int blocks;
    int spatial;      // spatial size of the stage body
    int in_spatial;   // spatial size of block1's 1x1 reduce conv
  };
  const std::vector<Stage> stages{{"s1", 64, 256, 3, 56, 56},
                                  {"s2", 128, 512, 4, 28, 56},
                                  {"s3", 256, 1024, 6, 14, 28},
                                  {"s4", 512, 2048, 3, 7, 14}};

  std::string stage_in = "conv1";
  for (const auto& st : stages) {
    const std::string ds = st.name + "_ds";
    layers.push_back({ds, st.trunk, 1, st.spatial, st.spatial, true, 0});
    edges.push_back({stage_in, ds, MergeKind::add});

    CouplingGroup trunk;
    trunk.member_layers.push_back(ds);

    std::string prev_out;
    for (int b = 1; b <= st.blocks; ++b) {
      const std::string base = st.name + "_b" + std::to_string(b);
      const int c1_spatial = b == 1 ? st.in_spatial : st.spatial;
      layers.push_back({base + "_c1", st.inner, 1, c1_spatial, c1_spatial,
                        true, 0});
      layers.push_back({base + "_c2", st.inner, 3, st.spatial, st.spatial,
                        true, 0});
      layers.push_back({base + "_c3", st.trunk, 1, st.spatial, st.spatial,
                        true, 0});
      if (b == 1) {
        edges.push_back({stage_in, base + "_c1", MergeKind::add});
      } else {
        edges.push_back({prev_out, base + "_c1", MergeKind::add});
        edges.push_back({ds, base + "_c1", MergeKind::add});
      }
      edges.push_back({base + "_c1", base + "_c2", MergeKind::add});
      edges.push_back({base + "_c2", base + "_c3", MergeKind::add});
      trunk.member_layers.push_back(base + "_c3");
      prev_out = base + "_c3";
    }
    couplings.push_back(std::move(trunk));
    stage_in = prev_out;
  }

  layers.push_back({"fc", 1000, 1, 1, 1, false, 0});
  edges.push_back({stage_in, "fc", MergeKind::add});

  return NetworkSpec(std::move(layers), std::move(edges),
                     std::move(couplings), 3);
}

// Random latency grid with optional dips; zero edges kept intact.
inline latprune::LayerGrid random_grid(Rng& rng, int max_in, int max_out,
                                       int granularity,
                                       bool allow_dips = true) {
  latprune::LayerGrid g;
  g.granularity = granularity;
  g.in_points = {0, std::max(1, max_in)};
  for (int j = 0; j <= max_out; j += granularity) g.out_points.push_back(j);
  if (g.out_points.back() != max_out) g.out_points.push_back(max_out);
  g.values_ms.assign(g.in_points.size() * g.out_points.size(), 0.0);
  for (std::size_t ii = 1; ii < g.in_points.size(); ++ii) {
    double level = 0.0;
    for (std::size_t oo = 1; oo < g.out_points.size(); ++oo) {
      const double step = allow_dips ? rng.unit() * 2.0 - 0.6 : rng.unit();
      level = std::max(0.0, level + step);
      g.values_ms[ii * g.out_points.size() + oo] = level;
    }
  }
  g.check();
  return g;
}

}  // namespace fixtures
