#include "latprune/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "latprune/errors.hpp"
#include "latprune/net_model.hpp"

namespace latprune {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::int64_t prefix_cost(const InstanceLayerSet& set, int m) {
  std::int64_t total = 0;
  for (int j = 0; j < m; ++j) total += set.groups[j].cost;
  return total;
}

double prefix_importance(const InstanceLayerSet& set, int m) {
  double total = 0.0;
  for (int j = 0; j < m; ++j) total += set.groups[j].importance;
  return total;
}

struct ForcedPrefixes {
  std::vector<int> forced;     // committed group count per set
  std::int64_t cost = 0;
  std::int64_t work_budget = 0;  // budget left for the dynamic program
};

ForcedPrefixes commit_forced(const KnapsackInstance& inst) {
  if (inst.budget < 0) throw std::invalid_argument("budget must be >= 0");
  ForcedPrefixes fp;
  for (const auto& set : inst.layer_sets) {
    const int f =
        std::min(set.min_groups, static_cast<int>(set.groups.size()));
    fp.forced.push_back(std::max(f, 0));
    fp.cost += prefix_cost(set, fp.forced.back());
  }
  if (fp.cost > inst.budget) {
    throw InfeasibleError("forced group prefixes cost " +
                          std::to_string(fp.cost) + ", above budget " +
                          std::to_string(inst.budget));
  }
  fp.work_budget = inst.budget - fp.cost;
  return fp;
}

KnapsackSolution finish(const KnapsackInstance& inst,
                        std::vector<int> kept_groups) {
  KnapsackSolution sol;
  sol.kept_groups = std::move(kept_groups);
  for (std::size_t l = 0; l < inst.layer_sets.size(); ++l) {
    const auto& set = inst.layer_sets[l];
    int& m = sol.kept_groups[l];
    // Ties resolve to pruning: a trailing zero-importance group is dropped
    // unless forced, or unless its negative cost funds the rest of the
    // selection.
    const int forced = std::min(set.min_groups,
                                static_cast<int>(set.groups.size()));
    while (m > forced && set.groups[m - 1].importance == 0.0 &&
           set.groups[m - 1].cost >= 0) {
      --m;
    }
    sol.total_cost += prefix_cost(set, m);
    sol.total_importance += prefix_importance(set, m);
  }
  if (sol.total_cost > inst.budget) {
    throw Error("solver produced an over-budget solution");  // unreachable
  }
  return sol;
}

// Budget-axis DP shared by the greedy solver and its look-ahead variant.
// maxV is double-buffered and swapped after every group; the keep row of a
// layer set holds the count committed by the groups processed so far and is
// only written when a group is actually kept.
KnapsackSolution solve_dp(const KnapsackInstance& inst, bool lookahead) {
  const ForcedPrefixes fp = commit_forced(inst);
  const std::size_t num_sets = inst.layer_sets.size();

  std::int64_t min_cost = 0;
  for (std::size_t l = 0; l < num_sets; ++l) {
    const auto& groups = inst.layer_sets[l].groups;
    for (std::size_t j = fp.forced[l]; j < groups.size(); ++j) {
      min_cost = std::min(min_cost, groups[j].cost);
    }
  }
  // Negative contributions extend the budget axis so that an over-budget
  // partial state can still be rescued by a later negative-cost group.
  const std::int64_t ext_budget = fp.work_budget - min_cost;
  const std::size_t axis = static_cast<std::size_t>(ext_budget) + 1;

  std::vector<double> max_v(axis, 0.0), update_v(axis, 0.0);
  std::vector<std::vector<int>> keep(num_sets, std::vector<int>(axis, 0));
  std::vector<int> prev_row(axis);

  for (std::size_t l = 0; l < num_sets; ++l) {
    const auto& set = inst.layer_sets[l];
    const int first = fp.forced[l];
    const int items = static_cast<int>(set.groups.size()) - first;
    bool negative_suffix = false;
    for (int j = 0; j < items; ++j) {
      negative_suffix |= set.groups[first + j].cost < 0;
    }
    std::vector<int>& row = keep[l];

    for (int j = 1; j <= items; ++j) {
      const GroupItem& item = set.groups[first + j - 1];
      // The precedence check reads the row as of group j-1; in-place reads
      // would see this pass's own keeps.
      prev_row = row;
      for (std::int64_t c = 1; c <= ext_budget; ++c) {
        const double v_prune = max_v[c];
        const std::int64_t src = c - item.cost;
        bool kept = false;
        double v_keep = kNegInf;
        if (src >= 0 && src <= ext_budget && prev_row[src] == j - 1) {
          v_keep = item.importance + max_v[src];
          if (lookahead) {
            // Keep the group if extending the kept prefix anywhere into the
            // layer's remaining suffix would beat pruning it.
            double cum_imp = 0.0;
            std::int64_t cum_cost = 0;
            for (int p = j; p <= items; ++p) {
              cum_imp += set.groups[first + p - 1].importance;
              cum_cost += set.groups[first + p - 1].cost;
              const std::int64_t sp = c - cum_cost;
              if (sp < 0) {
                if (!negative_suffix) break;
                continue;
              }
              if (sp > ext_budget) continue;
              if (cum_imp + max_v[sp] > v_prune) {
                kept = true;
                break;
              }
            }
          } else {
            kept = v_keep > v_prune;
          }
        }
        if (kept) {
          row[c] = j;
          update_v[c] = v_keep;
        } else {
          update_v[c] = v_prune;
        }
      }
      std::swap(max_v, update_v);
    }
  }

  // Backward pass: read each set's count at the budget still unspent.
  std::vector<int> counts(num_sets, 0);
  std::int64_t remaining = fp.work_budget;
  for (std::size_t rl = num_sets; rl-- > 0;) {
    const std::int64_t idx = std::clamp<std::int64_t>(remaining, 0, ext_budget);
    const int m = keep[rl][idx];
    for (int j = 0; j < m; ++j) {
      remaining -= inst.layer_sets[rl].groups[fp.forced[rl] + j].cost;
    }
    counts[rl] = fp.forced[rl] + m;
  }
  return finish(inst, std::move(counts));
}

}  // namespace

KnapsackSolution solve_greedy(const KnapsackInstance& inst) {
  return solve_dp(inst, false);
}

KnapsackSolution solve_nongreedy(const KnapsackInstance& inst) {
  // A speculative keep stores its own value even when that value is below
  // the pruning branch, so the look-ahead can end up behind the plain pass;
  // the better of the two feasible answers is returned.
  KnapsackSolution ahead = solve_dp(inst, true);
  KnapsackSolution plain = solve_dp(inst, false);
  return ahead.total_importance >= plain.total_importance ? ahead : plain;
}

std::uint64_t mck_work_estimate(const KnapsackInstance& inst) {
  std::int64_t lo = 0, hi = 0;
  std::uint64_t choices = 0;
  for (const auto& set : inst.layer_sets) {
    const int f = std::min(set.min_groups, static_cast<int>(set.groups.size()));
    std::int64_t cmin = std::numeric_limits<std::int64_t>::max();
    std::int64_t running = 0;
    for (int m = 0; m <= static_cast<int>(set.groups.size()); ++m) {
      if (m >= f) cmin = std::min(cmin, running);
      if (m < static_cast<int>(set.groups.size())) {
        running += set.groups[m].cost;
      }
    }
    lo += std::min<std::int64_t>(cmin, 0);
    hi += std::max<std::int64_t>(-cmin, 0);
    choices += set.groups.size() + 1 - static_cast<std::uint64_t>(f);
  }
  const std::int64_t axis = std::max<std::int64_t>(inst.budget, 0) + hi -
                            std::min<std::int64_t>(lo, 0) + 1;
  return static_cast<std::uint64_t>(axis) * std::max<std::uint64_t>(choices, 1);
}

KnapsackSolution oracle_mck(const KnapsackInstance& inst) {
  if (inst.budget < 0) throw std::invalid_argument("budget must be >= 0");
  const std::size_t num_sets = inst.layer_sets.size();

  // Choices per set: (count m, cumulative importance, cumulative cost).
  struct Choice {
    int m;
    double imp;
    std::int64_t cost;
  };
  std::vector<std::vector<Choice>> choices(num_sets);
  std::int64_t lo_axis = 0;    // running minimum over prefix sums of minima
  std::int64_t lo_running = 0;
  std::int64_t pullback = 0;   // how far below C a later set can still pull
  for (std::size_t l = 0; l < num_sets; ++l) {
    const auto& set = inst.layer_sets[l];
    const int f = std::min(set.min_groups, static_cast<int>(set.groups.size()));
    double imp = 0.0;
    std::int64_t cost = 0;
    std::int64_t cmin = std::numeric_limits<std::int64_t>::max();
    for (int m = 0; m <= static_cast<int>(set.groups.size()); ++m) {
      if (m >= f) {
        choices[l].push_back({m, imp, cost});
        cmin = std::min(cmin, cost);
      }
      if (m < static_cast<int>(set.groups.size())) {
        imp += set.groups[m].importance;
        cost += set.groups[m].cost;
      }
    }
    lo_running += cmin;
    lo_axis = std::min(lo_axis, lo_running);
    pullback += std::max<std::int64_t>(-cmin, 0);
  }

  // Exact-cost DP. The axis floor covers every reachable prefix minimum;
  // states above budget + remaining pullback can never end inside the
  // budget, so the axis stops there.
  const std::int64_t hi_axis = inst.budget + pullback;
  const std::size_t axis = static_cast<std::size_t>(hi_axis - lo_axis) + 1;
  std::uint64_t total_choices = 0;
  for (const auto& cs : choices) total_choices += cs.size();
  if (static_cast<std::uint64_t>(axis) *
          std::max<std::uint64_t>(total_choices, 1) > 200000000ULL) {
    throw Error("instance too large for the exact oracle");
  }

  std::vector<double> dp(axis, kNegInf);
  std::vector<std::vector<std::int16_t>> parent(
      num_sets, std::vector<std::int16_t>(axis, -1));
  dp[static_cast<std::size_t>(-lo_axis)] = 0.0;

  std::vector<double> next(axis);
  for (std::size_t l = 0; l < num_sets; ++l) {
    std::fill(next.begin(), next.end(), kNegInf);
    for (std::size_t s = 0; s < axis; ++s) {
      if (dp[s] == kNegInf) continue;
      for (const Choice& ch : choices[l]) {
        const std::int64_t ns = static_cast<std::int64_t>(s) + ch.cost;
        if (ns < 0 || ns >= static_cast<std::int64_t>(axis)) continue;
        const double v = dp[s] + ch.imp;
        if (v > next[ns]) {
          next[ns] = v;
          parent[l][ns] = static_cast<std::int16_t>(ch.m);
        }
      }
    }
    std::swap(dp, next);
  }

  std::int64_t best_state = -1;
  double best = kNegInf;
  const std::int64_t cap = inst.budget - lo_axis;
  for (std::int64_t s = 0; s < static_cast<std::int64_t>(axis) && s <= cap;
       ++s) {
    if (dp[s] > best) {
      best = dp[s];
      best_state = s;
    }
  }
  if (best_state < 0) {
    throw InfeasibleError("forced group prefixes exceed the budget");
  }

  std::vector<int> counts(num_sets, 0);
  std::int64_t state = best_state;
  for (std::size_t rl = num_sets; rl-- > 0;) {
    const int m = parent[rl][state];
    counts[rl] = m;
    state -= prefix_cost(inst.layer_sets[rl], m);
  }
  return finish(inst, std::move(counts));
}

KnapsackSolution oracle_exhaustive(const KnapsackInstance& inst,
                                   std::uint64_t enumeration_cap) {
  if (inst.budget < 0) throw std::invalid_argument("budget must be >= 0");
  const std::size_t num_sets = inst.layer_sets.size();
  std::vector<int> minimum(num_sets), maximum(num_sets);
  std::uint64_t combos = 1;
  for (std::size_t l = 0; l < num_sets; ++l) {
    const auto& set = inst.layer_sets[l];
    minimum[l] = std::min(set.min_groups, static_cast<int>(set.groups.size()));
    maximum[l] = static_cast<int>(set.groups.size());
    const std::uint64_t n = static_cast<std::uint64_t>(maximum[l] -
                                                       minimum[l]) + 1;
    if (combos > enumeration_cap / n) {
      throw Error("instance above the exhaustive enumeration cap");
    }
    combos *= n;
  }

  std::vector<int> counts = minimum;
  std::vector<int> best_counts;
  double best = kNegInf;
  while (true) {
    std::int64_t cost = 0;
    double imp = 0.0;
    for (std::size_t l = 0; l < num_sets; ++l) {
      cost += prefix_cost(inst.layer_sets[l], counts[l]);
      imp += prefix_importance(inst.layer_sets[l], counts[l]);
    }
    if (cost <= inst.budget && imp > best) {
      best = imp;
      best_counts = counts;
    }
    // odometer increment
    std::size_t l = 0;
    for (; l < num_sets; ++l) {
      if (counts[l] < maximum[l]) {
        ++counts[l];
        break;
      }
      counts[l] = minimum[l];
    }
    if (l == num_sets) break;
  }
  if (best_counts.empty()) {
    throw InfeasibleError("forced group prefixes exceed the budget");
  }
  return finish(inst, std::move(best_counts));
}

std::int64_t neuron_macs(int p_in, int kernel, int out_h, int out_w) {
  return static_cast<std::int64_t>(p_in) * kernel * kernel * out_h * out_w;
}

std::map<std::string, std::int64_t> flops_costs(
    const NetworkSpec& spec, const std::map<std::string, int>& kept) {
  std::map<std::string, std::int64_t> costs;
  for (const auto& l : spec.layers()) {
    if (l.kernel_size < 1 || l.out_height < 1 || l.out_width < 1) {
      throw Error("layer " + l.id + " misses geometry for the MAC model");
    }
    const int p_in = spec.input_channels_of(l.id, kept);
    costs[l.id] = neuron_macs(p_in, l.kernel_size, l.out_height, l.out_width);
  }
  return costs;
}

std::int64_t network_macs(const NetworkSpec& spec,
                          const std::map<std::string, int>& kept) {
  const auto costs = flops_costs(spec, kept);
  std::int64_t total = 0;
  for (const auto& l : spec.layers()) {
    total += costs.at(l.id) * kept.at(l.id);
  }
  return total;
}

std::int64_t network_params(const NetworkSpec& spec,
                            const std::map<std::string, int>& kept) {
  std::int64_t total = 0;
  for (const auto& l : spec.layers()) {
    const std::int64_t p_in = spec.input_channels_of(l.id, kept);
    total += p_in * l.kernel_size * l.kernel_size * kept.at(l.id);
  }
  return total;
}

KnapsackInstance KnapsackInstance::from_json(const nlohmann::json& j) {
  try {
    KnapsackInstance inst;
    inst.budget = j.at("budget").get<std::int64_t>();
    for (const auto& js : j.at("layer_sets")) {
      InstanceLayerSet set;
      set.name = js.value("name", std::string());
      set.min_groups = js.value("min_groups", 0);
      for (const auto& jg : js.at("groups")) {
        GroupItem g;
        g.importance = jg.at("importance").get<double>();
        g.cost = jg.at("cost").get<std::int64_t>();
        set.groups.push_back(g);
      }
      inst.layer_sets.push_back(std::move(set));
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad knapsack instance: ") + e.what());
  }
}

nlohmann::json KnapsackInstance::to_json() const {
  nlohmann::json j;
  j["budget"] = budget;
  j["layer_sets"] = nlohmann::json::array();
  for (const auto& set : layer_sets) {
    nlohmann::json js;
    js["name"] = set.name;
    js["min_groups"] = set.min_groups;
    js["groups"] = nlohmann::json::array();
    for (const auto& g : set.groups) {
      js["groups"].push_back({{"importance", g.importance}, {"cost", g.cost}});
    }
    j["layer_sets"].push_back(std::move(js));
  }
  return j;
}

KnapsackInstance KnapsackInstance::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open instance: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " +
                     e.what());
  }
  return from_json(j);
}

void KnapsackInstance::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace latprune
