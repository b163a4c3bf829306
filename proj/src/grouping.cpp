#include "latprune/grouping.hpp"

#include <algorithm>
#include <set>

#include "latprune/errors.hpp"
#include "latprune/net_model.hpp"

namespace latprune {

int group_size_for(const std::string& layer, const LatencyTable* table,
                   int p_in, const GroupingPolicy& policy) {
  auto it = policy.overrides.find(layer);
  if (it != policy.overrides.end()) return it->second;
  if (policy.mode == GroupingPolicy::Mode::fixed) {
    if (policy.fixed_size < 1) {
      throw std::invalid_argument("fixed group size must be >= 1");
    }
    return policy.fixed_size;
  }
  if (table == nullptr) {
    throw std::invalid_argument(
        "latency-aware grouping needs a latency table");
  }
  return detect_step_size(*table, layer, p_in);
}

int coupled_group_size(std::span<const int> sizes) {
  if (sizes.empty()) throw std::invalid_argument("empty layer set");
  return *std::max_element(sizes.begin(), sizes.end());
}

std::vector<std::vector<std::string>> prunable_layer_sets(
    const NetworkSpec& spec) {
  std::vector<std::vector<std::string>> sets;
  std::set<std::string> emitted;
  for (const auto& id : spec.topological_order()) {
    if (emitted.count(id)) continue;
    const CouplingGroup* g = spec.coupling_of(id);
    std::vector<std::string> members =
        g ? g->member_layers : std::vector<std::string>{id};
    bool prunable = true;
    for (const auto& m : members) {
      emitted.insert(m);
      if (!spec.layer(m).prunable) prunable = false;
    }
    if (prunable) sets.push_back(std::move(members));
  }
  return sets;
}

std::vector<LayerSetGroups> build_groups(
    const NetworkSpec& spec,
    const std::map<std::string, ImportanceVector>& importances,
    const std::map<std::string, ContributionVector>& contribs,
    const GroupingPolicy& policy, const LatencyTable* table) {
  std::vector<LayerSetGroups> out;
  for (auto& members : prunable_layer_sets(spec)) {
    LayerSetGroups set;
    set.layers = members;

    int width = -1;
    std::vector<int> sizes;
    for (const auto& id : members) {
      auto iv = importances.find(id);
      auto cv = contribs.find(id);
      if (iv == importances.end() || cv == contribs.end()) {
        throw Error("missing importance or contributions for layer " + id);
      }
      if (iv->second.scores.size() != cv->second.c.size()) {
        throw Error("importance and contribution widths differ for layer " +
                    id);
      }
      const int w = static_cast<int>(iv->second.scores.size());
      if (width >= 0 && w != width) {
        throw Error("coupled layers report different widths in set with " +
                    members.front());
      }
      width = w;
      sizes.push_back(group_size_for(id, table, cv->second.in_channels,
                                     policy));
      set.min_groups = std::max(set.min_groups,
                                spec.layer(id).min_kept_groups);
    }
    if (width == 0) continue;  // fully pruned set, nothing left to decide

    set.width = width;
    set.group_size = coupled_group_size(sizes);
    set.group_size = std::min(set.group_size, width);

    for (int begin = 0; begin < width; begin += set.group_size) {
      const int end = std::min(begin + set.group_size, width);
      NeuronGroup grp;
      grp.rank_begin = begin;
      grp.rank_end = end;
      for (const auto& id : members) {
        const ImportanceVector& iv = importances.at(id);
        const ContributionVector& cv = contribs.at(id);
        grp.importance +=
            layer_importance(iv, end) - layer_importance(iv, begin);
        grp.cost += cv.prefix_cost(end) - cv.prefix_cost(begin);
      }
      set.groups.push_back(grp);
    }
    set.min_groups = std::min(set.min_groups,
                              static_cast<int>(set.groups.size()));
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace latprune
