#include "latprune/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latprune/errors.hpp"
#include "latprune/solver.hpp"

namespace latprune {

std::vector<std::int64_t> make_schedule(std::int64_t t0, std::int64_t budget,
                                        int k, ScheduleKind kind) {
  if (k < 1) throw std::invalid_argument("schedule needs k >= 1");
  if (budget <= 0 || budget > t0) {
    throw std::invalid_argument("schedule needs 0 < budget <= t0");
  }
  std::vector<std::int64_t> out(k);
  const double t0_d = static_cast<double>(t0);
  const double ratio = static_cast<double>(budget) / t0_d;
  for (int i = 1; i <= k; ++i) {
    double v = 0.0;
    if (kind == ScheduleKind::geometric) {
      v = t0_d * std::pow(ratio, static_cast<double>(i) / k);
    } else {
      v = t0_d - (t0_d - static_cast<double>(budget)) * i / k;
    }
    out[i - 1] = std::llround(v);
  }
  out[k - 1] = budget;
  // Collapse duplicates after rounding by decrementing, never below the
  // final budget (tiny integer ranges may plateau there).
  for (int i = 1; i < k; ++i) {
    out[i] = std::max(std::min(out[i], out[i - 1] - 1), budget);
  }
  return out;
}

namespace {

struct LayerState {
  std::vector<int> kept_ids;  // original channel indices, ascending
};

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += "+";
    out += id;
  }
  return out;
}

NetworkSpec with_protected(const NetworkSpec& spec,
                           const std::set<std::string>& protected_ids) {
  std::vector<LayerSpec> layers = spec.layers();
  for (auto& l : layers) {
    if (protected_ids.count(l.id)) l.prunable = false;
  }
  return NetworkSpec(std::move(layers), spec.edges(), spec.couplings(),
                     spec.input_channels());
}

}  // namespace

PrunePlan plan(const NetworkSpec& spec, const LatencyTable* table,
               ImportanceProvider& provider, const PlannerConfig& cfg) {
  const ValidationReport vr = spec.validate();
  if (!vr.ok()) {
    std::string msg = "invalid network spec:";
    for (const auto& v : vr.violations) msg += "\n  " + v;
    throw Error(msg);
  }
  if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (cfg.scale < 1) throw std::invalid_argument("scale must be >= 1");
  if (cfg.cost_mode == CostMode::latency && table == nullptr) {
    throw std::invalid_argument("latency mode needs a latency table");
  }
  if (!cfg.budget_units && !cfg.budget_ratio) {
    throw std::invalid_argument("either budget_units or budget_ratio is required");
  }

  const std::vector<std::string> topo = spec.topological_order();

  std::set<std::string> protected_ids;
  if (cfg.protected_layers) {
    for (const auto& id : *cfg.protected_layers) {
      spec.layer(id);  // throws on unknown id
      protected_ids.insert(id);
    }
  } else if (!topo.empty()) {
    protected_ids.insert(topo.front());
  }
  const NetworkSpec eff = with_protected(spec, protected_ids);

  // Grouping per paper practice: uniform per-neuron MAC costs need no
  // latency-aware step detection.
  GroupingPolicy policy = cfg.grouping;
  if (cfg.cost_mode == CostMode::flops &&
      policy.mode == GroupingPolicy::Mode::latency_aware) {
    policy.mode = GroupingPolicy::Mode::fixed;
    policy.fixed_size = 1;
  }

  // Table coverage: every layer's grid must span its widest possible input
  // and its full output width.
  if (cfg.cost_mode == CostMode::latency) {
    NetworkSpec::KeptCounts full;
    for (const auto& l : eff.layers()) full[l.id] = l.out_neurons;
    std::string missing;
    for (const auto& l : eff.layers()) {
      if (!table->has_layer(l.id)) {
        missing += " " + l.id;
        continue;
      }
      const LayerGrid& g = table->grid(l.id);
      if (g.max_out() < l.out_neurons ||
          g.max_in() < eff.input_channels_of(l.id, full)) {
        missing += " " + l.id;
      }
    }
    if (!missing.empty()) {
      throw Error("latency table does not cover layers:" + missing);
    }
  }

  std::map<std::string, LayerState> state;
  NetworkSpec::KeptCounts counts;
  for (const auto& l : eff.layers()) {
    LayerState s;
    s.kept_ids.resize(l.out_neurons);
    std::iota(s.kept_ids.begin(), s.kept_ids.end(), 0);
    state[l.id] = std::move(s);
    counts[l.id] = l.out_neurons;
  }

  auto cost_of = [&](const std::string& id, int p_in,
                     int p_out) -> std::int64_t {
    if (cfg.cost_mode == CostMode::latency) {
      return scale_ms(table->lookup(id, p_in, p_out), cfg.scale);
    }
    const LayerSpec& l = eff.layer(id);
    return neuron_macs(p_in, l.kernel_size, l.out_height, l.out_width) *
           p_out;
  };

  std::int64_t t0 = 0;
  for (const auto& id : topo) {
    t0 += cost_of(id, eff.input_channels_of(id, counts), counts[id]);
  }

  std::int64_t budget = 0;
  if (cfg.budget_units) {
    budget = *cfg.budget_units;
  } else {
    budget = std::llround(*cfg.budget_ratio * static_cast<double>(t0));
  }
  if (budget <= 0 || budget > t0) {
    throw std::invalid_argument("budget " + std::to_string(budget) +
                                " outside (0, " + std::to_string(t0) + "]");
  }

  PrunePlan result;
  result.config = cfg;
  result.t0_units = t0;
  result.milestones = make_schedule(t0, budget, cfg.steps, cfg.schedule);

  // Layers outside every prunable set keep their width; their cost is a
  // per-milestone constant that shrinks the solver budget.
  std::set<std::string> solvable;
  for (const auto& members : prunable_layer_sets(eff)) {
    solvable.insert(members.begin(), members.end());
  }

  for (int step = 1; step <= cfg.steps; ++step) {
    const std::int64_t milestone_budget = result.milestones[step - 1];
    const auto raw_scores = provider.scores_at_step(step, eff);

    // Importance and contributions restricted to the surviving neurons at
    // the current input widths.
    std::map<std::string, ImportanceVector> importances;
    std::map<std::string, ContributionVector> contribs;
    std::int64_t fixed_cost = 0;
    for (const auto& id : topo) {
      const LayerSpec& l = eff.layer(id);
      const int p_in = eff.input_channels_of(id, counts);
      if (!solvable.count(id)) {
        fixed_cost += cost_of(id, p_in, counts[id]);
        continue;
      }
      const std::vector<int>& kept = state[id].kept_ids;
      auto it = raw_scores.find(id);
      if (it == raw_scores.end() ||
          static_cast<int>(it->second.size()) != l.out_neurons) {
        throw Error("importance provider does not cover layer " + id);
      }
      std::vector<double> scores(kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i) {
        scores[i] = it->second[kept[i]];
      }
      importances.emplace(id,
                          ImportanceVector::from_scores(id, std::move(scores)));

      ContributionVector cv;
      cv.layer = id;
      cv.in_channels = p_in;
      if (cfg.cost_mode == CostMode::latency) {
        cv = contributions(*table, id, p_in, cfg.scale);
        cv.c.resize(kept.size());
      } else {
        cv.c.assign(kept.size(), neuron_macs(p_in, l.kernel_size,
                                             l.out_height, l.out_width));
      }
      contribs.emplace(id, std::move(cv));
    }

    std::vector<LayerSetGroups> sets =
        build_groups(eff, importances, contribs, policy,
                     cfg.cost_mode == CostMode::latency ? table : nullptr);

    KnapsackInstance inst;
    if (fixed_cost > milestone_budget) {
      throw InfeasibleError("milestone " + std::to_string(step) +
                            ": fixed layers alone cost " +
                            std::to_string(fixed_cost) + " of " +
                            std::to_string(milestone_budget));
    }
    inst.budget = milestone_budget - fixed_cost;
    for (const auto& s : sets) {
      InstanceLayerSet is;
      is.name = join_ids(s.layers);
      is.min_groups = s.min_groups;
      for (const auto& g : s.groups) {
        is.groups.push_back({g.importance, g.cost});
      }
      inst.layer_sets.push_back(std::move(is));
    }

    KnapsackSolution sol;
    try {
      sol = cfg.solver == SolverKind::greedy ? solve_greedy(inst)
                                             : solve_nongreedy(inst);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError("milestone " + std::to_string(step) + ": " +
                            e.what());
    }

    PruneSolution ps;
    ps.milestone = step;
    ps.budget_units = milestone_budget;
    ps.achieved_units = fixed_cost + sol.total_cost;
    ps.achieved_importance = sol.total_importance;
    ps.sets = sets;
    ps.kept_group_counts = sol.kept_groups;

    for (std::size_t si = 0; si < sets.size(); ++si) {
      const LayerSetGroups& s = sets[si];
      const int m = sol.kept_groups[si];
      const int kept_count = m == 0 ? 0 : s.groups[m - 1].rank_end;
      for (const auto& id : s.layers) {
        const ImportanceVector& iv = importances.at(id);
        std::vector<int> survivors(kept_count);
        const std::vector<int>& cur = state[id].kept_ids;
        for (int r = 0; r < kept_count; ++r) {
          survivors[r] = cur[iv.rank_order[r]];
        }
        std::sort(survivors.begin(), survivors.end());
        state[id].kept_ids = std::move(survivors);
        counts[id] = kept_count;
      }
    }

    for (const auto& id : topo) {
      ps.kept_counts[id] = counts[id];
      ps.kept_neurons[id] = state[id].kept_ids;
    }
    result.steps.push_back(std::move(ps));
  }

  // Final report.
  PlanReport& rep = result.report;
  rep.layer_order = topo;
  for (const auto& id : topo) {
    rep.kept_counts[id] = counts[id];
    rep.total_counts[id] = spec.layer(id).out_neurons;
  }
  rep.t0_units = t0;
  rep.final_units = result.steps.back().achieved_units;
  if (cfg.cost_mode == CostMode::latency) {
    rep.final_ms = static_cast<double>(rep.final_units) / cfg.scale;
  }
  rep.speedup = static_cast<double>(t0) /
                static_cast<double>(std::max<std::int64_t>(rep.final_units, 1));
  rep.macs = network_macs(spec, counts);
  rep.params = network_params(spec, counts);
  if (cfg.calib_slope && cfg.cost_mode == CostMode::latency) {
    rep.calibrated_ms = calibrated_latency_ms(
        result, *cfg.calib_slope, cfg.calib_intercept.value_or(0.0));
  }
  return result;
}

double calibrated_latency_ms(const PrunePlan& p, double slope,
                             double intercept) {
  const double remaining = static_cast<double>(p.report.final_units) /
                           static_cast<double>(p.t0_units);
  const double t0_ms =
      static_cast<double>(p.t0_units) / static_cast<double>(p.config.scale);
  return (slope * remaining + intercept) * t0_ms;
}

namespace {

std::string schedule_to_string(ScheduleKind k) {
  return k == ScheduleKind::geometric ? "geometric" : "linear";
}
ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "geometric") return ScheduleKind::geometric;
  if (s == "linear") return ScheduleKind::linear;
  throw ParseError("unknown schedule kind: " + s);
}
std::string cost_to_string(CostMode m) {
  return m == CostMode::latency ? "latency" : "flops";
}
CostMode cost_from_string(const std::string& s) {
  if (s == "latency") return CostMode::latency;
  if (s == "flops") return CostMode::flops;
  throw ParseError("unknown cost mode: " + s);
}
std::string solver_to_string(SolverKind k) {
  return k == SolverKind::greedy ? "greedy" : "nongreedy";
}
SolverKind solver_from_string(const std::string& s) {
  if (s == "greedy") return SolverKind::greedy;
  if (s == "nongreedy") return SolverKind::nongreedy;
  throw ParseError("unknown solver kind: " + s);
}
std::string grouping_to_string(GroupingPolicy::Mode m) {
  return m == GroupingPolicy::Mode::latency_aware ? "latency" : "fixed";
}
GroupingPolicy::Mode grouping_from_string(const std::string& s) {
  if (s == "latency") return GroupingPolicy::Mode::latency_aware;
  if (s == "fixed") return GroupingPolicy::Mode::fixed;
  throw ParseError("unknown grouping mode: " + s);
}

nlohmann::json config_to_json(const PlannerConfig& cfg) {
  nlohmann::json j;
  j["steps"] = cfg.steps;
  j["prune_interval"] = cfg.prune_interval;
  if (cfg.budget_units) j["budget_units"] = *cfg.budget_units;
  if (cfg.budget_ratio) j["budget_ratio"] = *cfg.budget_ratio;
  j["schedule"] = schedule_to_string(cfg.schedule);
  j["cost_mode"] = cost_to_string(cfg.cost_mode);
  j["solver"] = solver_to_string(cfg.solver);
  if (cfg.protected_layers) j["protected_layers"] = *cfg.protected_layers;
  j["grouping"] = {{"mode", grouping_to_string(cfg.grouping.mode)},
                   {"fixed_size", cfg.grouping.fixed_size},
                   {"overrides", cfg.grouping.overrides}};
  j["scale"] = cfg.scale;
  j["seed"] = cfg.seed;
  if (cfg.calib_slope) j["calib_slope"] = *cfg.calib_slope;
  if (cfg.calib_intercept) j["calib_intercept"] = *cfg.calib_intercept;
  return j;
}

PlannerConfig config_from_json(const nlohmann::json& j) {
  PlannerConfig cfg;
  cfg.steps = j.at("steps").get<int>();
  cfg.prune_interval = j.value("prune_interval", 0);
  if (j.contains("budget_units")) {
    cfg.budget_units = j["budget_units"].get<std::int64_t>();
  }
  if (j.contains("budget_ratio")) {
    cfg.budget_ratio = j["budget_ratio"].get<double>();
  }
  cfg.schedule = schedule_from_string(j.at("schedule").get<std::string>());
  cfg.cost_mode = cost_from_string(j.at("cost_mode").get<std::string>());
  cfg.solver = solver_from_string(j.at("solver").get<std::string>());
  if (j.contains("protected_layers")) {
    cfg.protected_layers = j["protected_layers"].get<std::vector<std::string>>();
  }
  const auto& jg = j.at("grouping");
  cfg.grouping.mode = grouping_from_string(jg.at("mode").get<std::string>());
  cfg.grouping.fixed_size = jg.value("fixed_size", 1);
  cfg.grouping.overrides =
      jg.value("overrides", std::map<std::string, int>{});
  cfg.scale = j.value("scale", 1000);
  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("calib_slope")) {
    cfg.calib_slope = j["calib_slope"].get<double>();
  }
  if (j.contains("calib_intercept")) {
    cfg.calib_intercept = j["calib_intercept"].get<double>();
  }
  return cfg;
}

}  // namespace

nlohmann::json PrunePlan::to_json() const {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  j["t0_units"] = t0_units;
  j["milestones"] = milestones;
  j["steps"] = nlohmann::json::array();
  for (const auto& ps : steps) {
    nlohmann::json js;
    js["milestone"] = ps.milestone;
    js["budget_units"] = ps.budget_units;
    js["achieved_units"] = ps.achieved_units;
    js["achieved_importance"] = ps.achieved_importance;
    js["kept_counts"] = ps.kept_counts;
    js["kept_neurons"] = ps.kept_neurons;
    js["kept_group_counts"] = ps.kept_group_counts;
    js["layer_sets"] = nlohmann::json::array();
    for (const auto& s : ps.sets) {
      nlohmann::json jset;
      jset["layers"] = s.layers;
      jset["width"] = s.width;
      jset["group_size"] = s.group_size;
      jset["min_groups"] = s.min_groups;
      jset["groups"] = nlohmann::json::array();
      for (const auto& g : s.groups) {
        jset["groups"].push_back({{"rank_begin", g.rank_begin},
                                  {"rank_end", g.rank_end},
                                  {"importance", g.importance},
                                  {"cost", g.cost}});
      }
      js["layer_sets"].push_back(std::move(jset));
    }
    j["steps"].push_back(std::move(js));
  }
  nlohmann::json jr;
  jr["layer_order"] = report.layer_order;
  jr["kept_counts"] = report.kept_counts;
  jr["total_counts"] = report.total_counts;
  jr["t0_units"] = report.t0_units;
  jr["final_units"] = report.final_units;
  jr["final_ms"] = report.final_ms;
  jr["speedup"] = report.speedup;
  jr["macs"] = report.macs;
  jr["params"] = report.params;
  if (report.calibrated_ms) jr["calibrated_ms"] = *report.calibrated_ms;
  j["report"] = std::move(jr);
  return j;
}

PrunePlan PrunePlan::from_json(const nlohmann::json& j) {
  try {
    PrunePlan p;
    p.config = config_from_json(j.at("config"));
    p.t0_units = j.at("t0_units").get<std::int64_t>();
    p.milestones = j.at("milestones").get<std::vector<std::int64_t>>();
    for (const auto& js : j.at("steps")) {
      PruneSolution ps;
      ps.milestone = js.at("milestone").get<int>();
      ps.budget_units = js.at("budget_units").get<std::int64_t>();
      ps.achieved_units = js.at("achieved_units").get<std::int64_t>();
      ps.achieved_importance = js.at("achieved_importance").get<double>();
      ps.kept_counts = js.at("kept_counts").get<std::map<std::string, int>>();
      ps.kept_neurons =
          js.at("kept_neurons")
              .get<std::map<std::string, std::vector<int>>>();
      ps.kept_group_counts =
          js.at("kept_group_counts").get<std::vector<int>>();
      for (const auto& jset : js.at("layer_sets")) {
        LayerSetGroups s;
        s.layers = jset.at("layers").get<std::vector<std::string>>();
        s.width = jset.at("width").get<int>();
        s.group_size = jset.at("group_size").get<int>();
        s.min_groups = jset.at("min_groups").get<int>();
        for (const auto& jg : jset.at("groups")) {
          NeuronGroup g;
          g.rank_begin = jg.at("rank_begin").get<int>();
          g.rank_end = jg.at("rank_end").get<int>();
          g.importance = jg.at("importance").get<double>();
          g.cost = jg.at("cost").get<std::int64_t>();
          s.groups.push_back(g);
        }
        ps.sets.push_back(std::move(s));
      }
      p.steps.push_back(std::move(ps));
    }
    const auto& jr = j.at("report");
    p.report.layer_order = jr.at("layer_order").get<std::vector<std::string>>();
    p.report.kept_counts =
        jr.at("kept_counts").get<std::map<std::string, int>>();
    p.report.total_counts =
        jr.at("total_counts").get<std::map<std::string, int>>();
    p.report.t0_units = jr.at("t0_units").get<std::int64_t>();
    p.report.final_units = jr.at("final_units").get<std::int64_t>();
    p.report.final_ms = jr.at("final_ms").get<double>();
    p.report.speedup = jr.at("speedup").get<double>();
    p.report.macs = jr.at("macs").get<std::int64_t>();
    p.report.params = jr.at("params").get<std::int64_t>();
    if (jr.contains("calibrated_ms")) {
      p.report.calibrated_ms = jr["calibrated_ms"].get<double>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad plan artifact: ") + e.what());
  }
}

PrunePlan PrunePlan::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open plan: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " +
                     e.what());
  }
  return from_json(j);
}

void PrunePlan::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace latprune
