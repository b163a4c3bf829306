#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "latprune/grouping.hpp"
#include "latprune/importance.hpp"
#include "latprune/latency.hpp"
#include "latprune/net_model.hpp"

namespace latprune {

enum class ScheduleKind { geometric, linear };
enum class CostMode { latency, flops };
enum class SolverKind { greedy, nongreedy };

struct PlannerConfig {
  int steps = 30;
  int prune_interval = 0;  // minibatches between steps; recorded, no effect
  std::optional<std::int64_t> budget_units;
  std::optional<double> budget_ratio;
  ScheduleKind schedule = ScheduleKind::geometric;
  CostMode cost_mode = CostMode::latency;
  SolverKind solver = SolverKind::greedy;
  // Layers kept whole for the entire run. Unset means the first layer.
  std::optional<std::vector<std::string>> protected_layers;
  GroupingPolicy grouping;
  int scale = 1000;
  std::uint64_t seed = 0;
  std::optional<double> calib_slope;
  std::optional<double> calib_intercept;
};

// Decreasing intermediate budgets C^1 > ... > C^k = budget. Geometric decay
// t0 * (budget/t0)^(i/k) or evenly spaced; duplicates after rounding collapse
// by decrementing, never below the final budget.
std::vector<std::int64_t> make_schedule(std::int64_t t0, std::int64_t budget,
                                        int k, ScheduleKind kind);

// State after one milestone. Kept neurons are original channel indices,
// sorted ascending; coupled layers always report equal counts.
struct PruneSolution {
  int milestone = 0;
  std::int64_t budget_units = 0;
  std::int64_t achieved_units = 0;  // recomputed model cost, <= budget_units
  double achieved_importance = 0.0;
  std::map<std::string, int> kept_counts;
  std::map<std::string, std::vector<int>> kept_neurons;
  std::vector<LayerSetGroups> sets;  // groups fed to the solver, for audit
  std::vector<int> kept_group_counts;
};

struct PlanReport {
  std::vector<std::string> layer_order;
  std::map<std::string, int> kept_counts;
  std::map<std::string, int> total_counts;
  std::int64_t t0_units = 0;
  std::int64_t final_units = 0;
  double final_ms = 0.0;  // latency mode only; final_units / scale
  double speedup = 1.0;   // t0_units / final_units
  std::int64_t macs = 0;
  std::int64_t params = 0;
  std::optional<double> calibrated_ms;
};

struct PrunePlan {
  PlannerConfig config;
  std::int64_t t0_units = 0;
  std::vector<std::int64_t> milestones;
  std::vector<PruneSolution> steps;
  PlanReport report;

  static PrunePlan from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static PrunePlan load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Iterative pruning: per milestone, pull importance, recompute contributions
// at the current input widths, rebuild groups and solve under the milestone
// budget. Pruned neurons never return. `table` may be null in FLOPs mode.
PrunePlan plan(const NetworkSpec& spec, const LatencyTable* table,
               ImportanceProvider& provider, const PlannerConfig& cfg);

// Calibration-adjusted latency for a finished plan: the measured-vs-predicted
// line is applied to the remaining-latency fraction final/t0.
double calibrated_latency_ms(const PrunePlan& p, double slope,
                             double intercept);

}  // namespace latprune
