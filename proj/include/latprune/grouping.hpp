#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "latprune/importance.hpp"
#include "latprune/latency.hpp"

namespace latprune {

class NetworkSpec;

// How many channels form one prune/keep unit per layer.
struct GroupingPolicy {
  enum class Mode { latency_aware, fixed };
  Mode mode = Mode::latency_aware;
  int fixed_size = 1;
  std::map<std::string, int> overrides;
};

// Group size of one layer at the current input width. Latency-aware mode
// uses the detected staircase step; explicit overrides win in either mode.
int group_size_for(const std::string& layer, const LatencyTable* table,
                   int p_in, const GroupingPolicy& policy);

// Coupled layers share the largest member step.
int coupled_group_size(std::span<const int> sizes);

// A contiguous block of rank positions treated as one knapsack item.
// Groups of a layer set form a precedence chain in vector order: a group may
// be kept only if all earlier (higher-importance) groups are kept.
struct NeuronGroup {
  int rank_begin = 0;  // [rank_begin, rank_end) in descending-importance order
  int rank_end = 0;
  double importance = 0.0;
  std::int64_t cost = 0;
};

// One prunable unit of the network: a single layer or a coupled layer set,
// partitioned into groups.
struct LayerSetGroups {
  std::vector<std::string> layers;
  int width = 0;       // current channel count, equal across members
  int group_size = 0;
  int min_groups = 0;  // forced prefix length
  std::vector<NeuronGroup> groups;
};

// Prunable layer sets in topological order: coupling groups appear once,
// remaining layers stand alone. A set containing any non-prunable member is
// width-locked and omitted entirely.
std::vector<std::vector<std::string>> prunable_layer_sets(
    const NetworkSpec& spec);

// Partitions every prunable layer set into ceil(width / s) groups by
// descending importance rank, aggregating importance and latency cost across
// member layers. Non-prunable sets produce no entry. Importance and
// contribution vectors define the current widths and must agree per set.
std::vector<LayerSetGroups> build_groups(
    const NetworkSpec& spec,
    const std::map<std::string, ImportanceVector>& importances,
    const std::map<std::string, ContributionVector>& contribs,
    const GroupingPolicy& policy, const LatencyTable* table);

}  // namespace latprune
