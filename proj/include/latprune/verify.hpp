#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latprune/solver.hpp"

namespace latprune {

enum class OracleMode { mck, exhaustive, both, none };

struct InstanceGenParams {
  int max_layer_sets = 12;
  int max_groups = 64;
  std::int64_t cost_lo = 1;
  std::int64_t cost_hi = 12;
  double max_importance = 10.0;
  double negative_fraction = 0.2;    // instances containing negative costs
  double min_groups_fraction = 0.2;  // instances with min_groups >= 1
};

// Random instance with non-increasing importances per layer set and a budget
// uniform in [0, max(total cost, 0)]. Deterministic under the seed.
KnapsackInstance random_instance(const InstanceGenParams& p,
                                 std::uint64_t seed);

struct Violation {
  std::uint64_t seed = 0;
  std::string check;
  std::string detail;
  KnapsackInstance repro;  // shrunk while still failing
};

struct VerifyStats {
  std::uint64_t instances = 0;
  std::uint64_t oracle_checked = 0;   // instances where oracles ran
  std::uint64_t oracle_skipped = 0;   // mck work above cap
  double mean_gap_greedy = 0.0;       // relative to oracle optimum
  double max_gap_greedy = 0.0;
  double mean_gap_nongreedy = 0.0;
  double max_gap_nongreedy = 0.0;
  std::vector<Violation> violations;
};

struct VerifyOptions {
  std::uint64_t instances = 10000;
  std::uint64_t seed = 1;
  InstanceGenParams gen;
  OracleMode oracle = OracleMode::both;
  std::uint64_t exhaustive_cap = 1000000;
  std::uint64_t mck_work_cap = 50000000;
  bool run_nongreedy = true;
  std::function<void(std::uint64_t done)> progress;  // optional
};

// Runs the solvers over random instances and checks every invariant:
// recomputed cost within budget, forced prefixes honored, heuristic
// importance never above the oracle optimum, oracle agreement, and
// zero-importance groups pruned unless forced.
VerifyStats run_verification(const VerifyOptions& opts);

}  // namespace latprune
