#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace latprune {

class NetworkSpec;

struct GroupItem {
  double importance = 0.0;
  std::int64_t cost = 0;  // integer latency units, may be negative
};

// Groups of one layer set in precedence order: keeping item j requires
// keeping items 0..j-1. Importances are non-increasing by construction
// (block sums of a descending ranking); costs are unrestricted.
struct InstanceLayerSet {
  std::string name;
  int min_groups = 0;
  std::vector<GroupItem> groups;
};

struct KnapsackInstance {
  std::vector<InstanceLayerSet> layer_sets;
  std::int64_t budget = 0;

  static KnapsackInstance from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static KnapsackInstance load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Kept prefix lengths per layer set. Importance and cost are recomputed from
// the prefixes, never read back from solver state.
struct KnapsackSolution {
  std::vector<int> kept_groups;
  double total_importance = 0.0;
  std::int64_t total_cost = 0;
};

// Budget-axis dynamic program with the per-layer precedence check; groups
// are kept only on strict improvement. Negative costs extend the budget axis
// by the most negative entry. min_groups prefixes are committed before the
// program runs; throws InfeasibleError when they alone exceed the budget.
// O(total groups x budget).
KnapsackSolution solve_greedy(const KnapsackInstance& inst);

// Same contract, but a kept-or-not decision also scans the importance the
// rest of the layer could still contribute. O(sum N_l^2 x budget).
KnapsackSolution solve_nongreedy(const KnapsackInstance& inst);

// Exact optimum: since importance and cost depend only on the kept prefix
// length, the problem is a multiple-choice knapsack over per-set counts.
KnapsackSolution oracle_mck(const KnapsackInstance& inst);

// Ground truth by enumerating every count vector. Throws Error when the
// product of choices exceeds the cap.
KnapsackSolution oracle_exhaustive(const KnapsackInstance& inst,
                                   std::uint64_t enumeration_cap = 1000000);

// DP cell-count estimate for oracle_mck, used to cap harness work.
std::uint64_t mck_work_estimate(const KnapsackInstance& inst);

// Multiply-accumulate count of one output channel: p_in * K^2 * H * W.
std::int64_t neuron_macs(int p_in, int kernel, int out_h, int out_w);

// Per-layer per-neuron MAC cost at the given kept counts. Every neuron of a
// layer costs the same, so the same solvers run with uniform within-layer
// costs. Throws Error for layers missing geometry.
std::map<std::string, std::int64_t> flops_costs(
    const NetworkSpec& spec, const std::map<std::string, int>& kept);

// Total MACs of the network at the given kept counts.
std::int64_t network_macs(const NetworkSpec& spec,
                          const std::map<std::string, int>& kept);

// Weight parameter count at the given kept counts (kernel weights only).
std::int64_t network_params(const NetworkSpec& spec,
                            const std::map<std::string, int>& kept);

}  // namespace latprune
