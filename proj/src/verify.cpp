#include "latprune/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "latprune/errors.hpp"

namespace latprune {

namespace {

std::uint64_t mix64(std::uint64_t x) {
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
  double unit() {  // [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(
                    unit() * static_cast<double>(hi - lo + 1));
  }

 private:
  std::uint64_t state_;
};

std::int64_t total_cost(const KnapsackInstance& inst) {
  std::int64_t total = 0;
  for (const auto& set : inst.layer_sets) {
    for (const auto& g : set.groups) total += g.cost;
  }
  return total;
}

std::int64_t recompute_cost(const KnapsackInstance& inst,
                            const std::vector<int>& kept) {
  std::int64_t total = 0;
  for (std::size_t l = 0; l < inst.layer_sets.size(); ++l) {
    for (int j = 0; j < kept[l]; ++j) {
      total += inst.layer_sets[l].groups[j].cost;
    }
  }
  return total;
}

double recompute_importance(const KnapsackInstance& inst,
                            const std::vector<int>& kept) {
  double total = 0.0;
  for (std::size_t l = 0; l < inst.layer_sets.size(); ++l) {
    for (int j = 0; j < kept[l]; ++j) {
      total += inst.layer_sets[l].groups[j].importance;
    }
  }
  return total;
}

}  // namespace

KnapsackInstance random_instance(const InstanceGenParams& p,
                                 std::uint64_t seed) {
  Rng rng(mix64(seed));
  KnapsackInstance inst;
  const bool with_negative = rng.unit() < p.negative_fraction;
  const bool with_min_groups = rng.unit() < p.min_groups_fraction;
  const int num_sets = static_cast<int>(rng.range(1, p.max_layer_sets));
  for (int l = 0; l < num_sets; ++l) {
    InstanceLayerSet set;
    set.name = "set" + std::to_string(l);
    const int groups = static_cast<int>(rng.range(1, p.max_groups));
    // Importances drawn then sorted descending, mirroring rank order.
    std::vector<double> imps(groups);
    for (auto& v : imps) v = rng.unit() * p.max_importance;
    std::sort(imps.begin(), imps.end(), std::greater<>());
    for (int j = 0; j < groups; ++j) {
      GroupItem g;
      g.importance = imps[j];
      g.cost = rng.range(p.cost_lo, p.cost_hi);
      if (with_negative && rng.unit() < 0.15) g.cost = -rng.range(1, p.cost_hi);
      set.groups.push_back(g);
    }
    if (with_min_groups && rng.unit() < 0.5) {
      set.min_groups = static_cast<int>(rng.range(1, std::min(groups, 3)));
    }
    inst.layer_sets.push_back(std::move(set));
  }
  const std::int64_t total = std::max<std::int64_t>(total_cost(inst), 0);
  inst.budget = rng.range(0, total);
  return inst;
}

namespace {

using CheckFn = std::function<std::optional<std::string>(
    const KnapsackInstance&)>;

// Drops layer sets and trailing groups while the failure reproduces.
KnapsackInstance shrink(KnapsackInstance inst, const CheckFn& failing) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t l = 0; l < inst.layer_sets.size() && inst.layer_sets.size() > 1;) {
      KnapsackInstance smaller = inst;
      smaller.layer_sets.erase(smaller.layer_sets.begin() +
                               static_cast<std::ptrdiff_t>(l));
      if (failing(smaller)) {
        inst = std::move(smaller);
        changed = true;
      } else {
        ++l;
      }
    }
    for (std::size_t l = 0; l < inst.layer_sets.size(); ++l) {
      while (inst.layer_sets[l].groups.size() > 1) {
        KnapsackInstance smaller = inst;
        smaller.layer_sets[l].groups.pop_back();
        smaller.layer_sets[l].min_groups =
            std::min<int>(smaller.layer_sets[l].min_groups,
                          static_cast<int>(smaller.layer_sets[l].groups.size()));
        if (!failing(smaller)) break;
        inst = std::move(smaller);
        changed = true;
      }
    }
    KnapsackInstance halved = inst;
    halved.budget /= 2;
    if (halved.budget != inst.budget && failing(halved)) {
      inst = std::move(halved);
      changed = true;
    }
  }
  return inst;
}

std::optional<std::string> check_instance(const KnapsackInstance& inst,
                                          const VerifyOptions& opts,
                                          bool* oracle_ran, double* gap_greedy,
                                          double* gap_nongreedy) {
  *oracle_ran = false;
  KnapsackSolution greedy, nongreedy;
  try {
    greedy = solve_greedy(inst);
    if (opts.run_nongreedy) nongreedy = solve_nongreedy(inst);
  } catch (const InfeasibleError&) {
    std::int64_t forced_cost = 0;
    for (const auto& set : inst.layer_sets) {
      const int f =
          std::min(set.min_groups, static_cast<int>(set.groups.size()));
      for (int j = 0; j < f; ++j) forced_cost += set.groups[j].cost;
    }
    if (forced_cost <= inst.budget) {
      return "solver claims infeasible though the forced prefixes fit";
    }
    return std::nullopt;
  }

  auto check_solution = [&](const KnapsackSolution& sol,
                            const char* who) -> std::optional<std::string> {
    if (sol.kept_groups.size() != inst.layer_sets.size()) {
      return std::string(who) + ": wrong number of layer sets";
    }
    for (std::size_t l = 0; l < inst.layer_sets.size(); ++l) {
      const auto& set = inst.layer_sets[l];
      const int forced =
          std::min(set.min_groups, static_cast<int>(set.groups.size()));
      if (sol.kept_groups[l] < forced ||
          sol.kept_groups[l] > static_cast<int>(set.groups.size())) {
        return std::string(who) + ": kept count outside [forced, total]";
      }
    }
    const std::int64_t cost = recompute_cost(inst, sol.kept_groups);
    if (cost != sol.total_cost) {
      return std::string(who) + ": reported cost differs from prefix sum";
    }
    if (cost > inst.budget) {
      return std::string(who) + ": recomputed cost " + std::to_string(cost) +
             " above budget " + std::to_string(inst.budget);
    }
    const double imp = recompute_importance(inst, sol.kept_groups);
    if (std::abs(imp - sol.total_importance) >
        1e-9 * std::max(1.0, std::abs(imp))) {
      return std::string(who) + ": reported importance differs from prefix sum";
    }
    return std::nullopt;
  };

  if (auto err = check_solution(greedy, "greedy")) return err;
  if (opts.run_nongreedy) {
    if (auto err = check_solution(nongreedy, "nongreedy")) return err;
  }

  if (opts.oracle == OracleMode::none) return std::nullopt;

  const bool want_mck =
      opts.oracle == OracleMode::mck || opts.oracle == OracleMode::both;
  const bool want_exhaustive = opts.oracle == OracleMode::exhaustive ||
                               opts.oracle == OracleMode::both;

  std::optional<KnapsackSolution> exact;
  if (want_mck && mck_work_estimate(inst) <= opts.mck_work_cap) {
    try {
      exact = oracle_mck(inst);
    } catch (const InfeasibleError&) {
      return "oracle_mck claims infeasible though greedy found a solution";
    }
    if (auto err = check_solution(*exact, "oracle_mck")) return err;
  }
  if (want_exhaustive) {
    try {
      const KnapsackSolution brute = oracle_exhaustive(inst,
                                                       opts.exhaustive_cap);
      if (auto err = check_solution(brute, "oracle_exhaustive")) return err;
      if (exact &&
          std::abs(brute.total_importance - exact->total_importance) >
              1e-9 * std::max(1.0, std::abs(brute.total_importance))) {
        return "oracle_mck and oracle_exhaustive disagree: " +
               std::to_string(exact->total_importance) + " vs " +
               std::to_string(brute.total_importance);
      }
      if (!exact) exact = brute;
    } catch (const InfeasibleError&) {
      return "oracle_exhaustive claims infeasible though greedy succeeded";
    } catch (const Error&) {
      // above the enumeration cap
    }
  }

  if (exact) {
    *oracle_ran = true;
    const double opt = exact->total_importance;
    const double tol = 1e-9 * std::max(1.0, std::abs(opt));
    if (greedy.total_importance > opt + tol) {
      return "greedy importance above the oracle optimum";
    }
    if (opts.run_nongreedy && nongreedy.total_importance > opt + tol) {
      return "nongreedy importance above the oracle optimum";
    }
    *gap_greedy = opt > 0.0 ? (opt - greedy.total_importance) / opt : 0.0;
    *gap_nongreedy =
        opt > 0.0 && opts.run_nongreedy
            ? (opt - nongreedy.total_importance) / opt
            : 0.0;
  }
  return std::nullopt;
}

}  // namespace

VerifyStats run_verification(const VerifyOptions& opts) {
  VerifyStats stats;
  double sum_gap_greedy = 0.0, sum_gap_nongreedy = 0.0;

  for (std::uint64_t i = 0; i < opts.instances; ++i) {
    const std::uint64_t seed = opts.seed + i;
    const KnapsackInstance inst = random_instance(opts.gen, seed);
    ++stats.instances;

    bool oracle_ran = false;
    double gap_greedy = 0.0, gap_nongreedy = 0.0;
    const auto err =
        check_instance(inst, opts, &oracle_ran, &gap_greedy, &gap_nongreedy);
    if (err) {
      Violation v;
      v.seed = seed;
      v.check = *err;
      auto failing = [&](const KnapsackInstance& candidate)
          -> std::optional<std::string> {
        bool ran = false;
        double g1 = 0.0, g2 = 0.0;
        try {
          return check_instance(candidate, opts, &ran, &g1, &g2);
        } catch (const std::exception& e) {
          return std::string("exception: ") + e.what();
        }
      };
      v.repro = shrink(inst, failing);
      v.detail = *failing(v.repro);
      stats.violations.push_back(std::move(v));
    } else if (oracle_ran) {
      ++stats.oracle_checked;
      sum_gap_greedy += gap_greedy;
      sum_gap_nongreedy += gap_nongreedy;
      stats.max_gap_greedy = std::max(stats.max_gap_greedy, gap_greedy);
      stats.max_gap_nongreedy =
          std::max(stats.max_gap_nongreedy, gap_nongreedy);
    } else if (opts.oracle != OracleMode::none) {
      ++stats.oracle_skipped;
    }
    if (opts.progress && (i + 1) % 1000 == 0) opts.progress(i + 1);
  }
  if (stats.oracle_checked > 0) {
    stats.mean_gap_greedy =
        sum_gap_greedy / static_cast<double>(stats.oracle_checked);
    stats.mean_gap_nongreedy =
        sum_gap_nongreedy / static_cast<double>(stats.oracle_checked);
  }
  return stats;
}

}  // namespace latprune
