#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latprune/errors.hpp"
#include "latprune/grouping.hpp"
#include "latprune/importance.hpp"
#include "latprune/latency.hpp"
#include "latprune/net_model.hpp"
#include "latprune/planner.hpp"
#include "latprune/solver.hpp"
#include "latprune/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace latprune;

namespace {

bool quiet_logs() {
  const char* level = std::getenv("LATPRUNE_LOG");
  return level != nullptr && std::string(level) == "quiet";
}

int default_scale() {
  if (const char* env = std::getenv("LATPRUNE_SCALE")) {
    try {
      const int scale = std::stoi(env);
      if (scale >= 1) return scale;
    } catch (const std::exception&) {
    }
  }
  return 1000;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt + 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct LutBuildArgs {
  std::string samples;
  std::string out;
  std::string device = "unknown";
  int batch = 0;
  bool as_json = false;
};

void run_lut_build(const LutBuildArgs& a) {
  LatencyTable table = ingest_samples_file(a.samples);
  table.device = a.device;
  table.batch_size = a.batch;
  table.save(a.out);

  if (a.as_json) {
    json j;
    j["layers"] = json::object();
    for (const auto& [id, g] : table.grids()) {
      j["layers"][id] = {{"in_samples", g.in_points.size()},
                         {"out_samples", g.out_points.size()},
                         {"max_in", g.max_in()},
                         {"max_out", g.max_out()},
                         {"granularity", g.granularity}};
    }
    j["profile_count"] = table.profile_count;
    j["out"] = a.out;
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (quiet_logs()) return;
  std::cout << "built latency table: " << table.grids().size() << " layers, "
            << "up to " << table.profile_count
            << " profiles per cell, written to " << a.out << '\n';
  for (const auto& [id, g] : table.grids()) {
    std::cout << "  " << id << ": out 0.." << g.max_out() << " every "
              << g.granularity << ", in 0.." << g.max_in() << '\n';
  }
}

struct LutSynthArgs {
  std::string network;
  std::string out;
  int step = 8;
  double base = 0.2;
  double rise = 0.5;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> layer_steps;
  std::string device = "synthetic";
  bool as_json = false;
};

void run_lut_synth(const LutSynthArgs& a) {
  if (a.step < 1) throw CLI::ValidationError("--step must be >= 1");
  if (a.noise < 0.0) throw CLI::ValidationError("--noise must be >= 0");

  std::map<std::string, int> overrides;
  for (const auto& spec_str : a.layer_steps) {
    const auto eq = spec_str.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--layer-step expects layer=step, got " +
                                 spec_str);
    }
    try {
      overrides[spec_str.substr(0, eq)] = std::stoi(spec_str.substr(eq + 1));
    } catch (const std::exception&) {
      throw CLI::ValidationError("bad --layer-step value: " + spec_str);
    }
  }

  const NetworkSpec net = NetworkSpec::load(a.network);
  const auto vr = net.validate();
  if (!vr.ok()) {
    std::string msg = "invalid network spec:";
    for (const auto& v : vr.violations) msg += "\n  " + v;
    throw Error(msg);
  }

  NetworkSpec::KeptCounts full;
  for (const auto& l : net.layers()) full[l.id] = l.out_neurons;

  for (const auto& [id, step] : overrides) {
    if (!net.has_layer(id)) {
      throw CLI::ValidationError("--layer-step names unknown layer " + id);
    }
    if (step < 1 || step > net.layer(id).out_neurons) {
      throw CLI::ValidationError("--layer-step for " + id +
                                 " outside [1, out_neurons]");
    }
  }

  LatencyTable table;
  table.device = a.device;
  std::uint64_t salt = 0;
  for (const auto& l : net.layers()) {
    int step = a.step;
    if (auto it = overrides.find(l.id); it != overrides.end()) {
      step = it->second;
    } else if (step > l.out_neurons) {
      throw CLI::ValidationError("--step " + std::to_string(step) +
                                 " larger than out_neurons of layer " + l.id);
    }
    StaircaseParams p;
    p.out_channels = l.out_neurons;
    p.in_channels = std::max(1, net.input_channels_of(l.id, full));
    p.step = step;
    p.base_ms = a.base;
    p.rise_ms = a.rise;
    p.noise_ms = a.noise;
    p.seed = mix_seed(a.seed, salt++);
    table.add_layer(l.id, synth_staircase(p));
  }
  table.save(a.out);

  if (a.as_json) {
    json j;
    j["layers"] = table.grids().size();
    j["out"] = a.out;
    std::cout << j.dump(2) << '\n';
  } else if (!quiet_logs()) {
    std::cout << "synthesized latency table for " << table.grids().size()
              << " layers, written to " << a.out << '\n';
  }
}

std::unique_ptr<ImportanceProvider> parse_provider(const std::string& text,
                                                   std::uint64_t seed) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg =
      colon == std::string::npos ? std::string() : text.substr(colon + 1);
  try {
    if (kind == "fixed") {
      return make_constant_provider(arg.empty() ? 1.0 : std::stod(arg));
    }
    if (kind == "random") {
      return make_random_provider(arg.empty() ? seed : std::stoull(arg));
    }
    if (kind == "decay") {
      return make_decay_provider(arg.empty() ? 0.9 : std::stod(arg));
    }
  } catch (const std::invalid_argument&) {
  }
  throw CLI::ValidationError(
      "--provider expects fixed[:value], random[:seed] or decay[:factor]");
}

struct PlanArgs {
  std::string network;
  std::string lut;
  std::string importance;
  std::string provider;
  double budget_ratio = 0.0;
  std::int64_t budget_units = 0;
  bool has_ratio = false;
  bool has_units = false;
  int steps = 30;
  std::string schedule = "geometric";
  std::string cost = "latency";
  std::string solver = "greedy";
  std::string group = "latency";
  int scale = 1000;
  std::uint64_t seed = 0;
  std::vector<std::string> protect;
  bool no_protect = false;
  std::string out;
  bool as_json = false;
  double slope = 0.0;
  double intercept = 0.0;
  bool has_slope = false;
};

void print_report(const PlanReport& rep, CostMode mode) {
  std::cout << "per-layer configuration (kept/total):\n";
  for (const auto& id : rep.layer_order) {
    std::cout << "  " << id << ": " << rep.kept_counts.at(id) << "/"
              << rep.total_counts.at(id) << '\n';
  }
  const char* unit = mode == CostMode::latency ? "units" : "MACs";
  std::cout << "cost: " << rep.final_units << " of " << rep.t0_units << " "
            << unit;
  if (mode == CostMode::latency) {
    std::cout << " (" << rep.final_ms << " ms)";
  }
  std::cout << "\nestimated speedup: " << rep.speedup << "x\n"
            << "MACs: " << rep.macs << ", params: " << rep.params << '\n';
  if (rep.calibrated_ms) {
    std::cout << "calibrated latency: " << *rep.calibrated_ms << " ms\n";
  }
}

json report_to_json(const PlanReport& rep) {
  json j;
  j["layer_order"] = rep.layer_order;
  j["kept_counts"] = rep.kept_counts;
  j["total_counts"] = rep.total_counts;
  j["t0_units"] = rep.t0_units;
  j["final_units"] = rep.final_units;
  j["final_ms"] = rep.final_ms;
  j["speedup"] = rep.speedup;
  j["macs"] = rep.macs;
  j["params"] = rep.params;
  if (rep.calibrated_ms) j["calibrated_ms"] = *rep.calibrated_ms;
  return j;
}

void run_plan(const PlanArgs& a) {
  if (a.has_ratio == a.has_units) {
    throw CLI::ValidationError(
        "exactly one of --budget-ratio / --budget-units is required");
  }
  if (a.has_ratio && (a.budget_ratio <= 0.0 || a.budget_ratio > 1.0)) {
    throw CLI::ValidationError("--budget-ratio must be in (0, 1]");
  }
  if (a.importance.empty() == a.provider.empty()) {
    throw CLI::ValidationError(
        "exactly one of --importance / --provider is required");
  }
  if (a.steps < 1) throw CLI::ValidationError("--steps must be >= 1");
  if (a.scale < 1) throw CLI::ValidationError("--scale must be >= 1");

  PlannerConfig cfg;
  cfg.steps = a.steps;
  cfg.scale = a.scale;
  cfg.seed = a.seed;
  if (a.has_ratio) cfg.budget_ratio = a.budget_ratio;
  if (a.has_units) cfg.budget_units = a.budget_units;

  if (a.schedule == "geometric") {
    cfg.schedule = ScheduleKind::geometric;
  } else if (a.schedule == "linear") {
    cfg.schedule = ScheduleKind::linear;
  } else {
    throw CLI::ValidationError("--schedule must be geometric or linear");
  }
  if (a.cost == "latency") {
    cfg.cost_mode = CostMode::latency;
  } else if (a.cost == "flops") {
    cfg.cost_mode = CostMode::flops;
  } else {
    throw CLI::ValidationError("--cost must be latency or flops");
  }
  if (a.solver == "greedy") {
    cfg.solver = SolverKind::greedy;
  } else if (a.solver == "nongreedy") {
    cfg.solver = SolverKind::nongreedy;
  } else {
    throw CLI::ValidationError("--solver must be greedy or nongreedy");
  }
  if (a.group == "latency") {
    cfg.grouping.mode = GroupingPolicy::Mode::latency_aware;
  } else if (a.group.rfind("fixed:", 0) == 0) {
    cfg.grouping.mode = GroupingPolicy::Mode::fixed;
    try {
      cfg.grouping.fixed_size = std::stoi(a.group.substr(6));
    } catch (const std::exception&) {
      throw CLI::ValidationError("bad --group value: " + a.group);
    }
    if (cfg.grouping.fixed_size < 1) {
      throw CLI::ValidationError("fixed group size must be >= 1");
    }
  } else {
    throw CLI::ValidationError("--group must be latency or fixed:N");
  }
  if (a.no_protect) {
    cfg.protected_layers = std::vector<std::string>{};
  } else if (!a.protect.empty()) {
    cfg.protected_layers = a.protect;
  }
  if (a.has_slope) {
    cfg.calib_slope = a.slope;
    cfg.calib_intercept = a.intercept;
  }
  if (cfg.cost_mode == CostMode::latency && a.lut.empty()) {
    throw CLI::ValidationError("--cost latency requires --lut");
  }

  const NetworkSpec net = NetworkSpec::load(a.network);
  LatencyTable table;
  if (!a.lut.empty()) table = LatencyTable::load(a.lut);

  std::unique_ptr<ImportanceProvider> provider =
      a.importance.empty() ? parse_provider(a.provider, a.seed)
                           : load_importance_csv(a.importance, net);

  const PrunePlan result =
      plan(net, a.lut.empty() ? nullptr : &table, *provider, cfg);
  if (!a.out.empty()) result.save(a.out);

  if (a.as_json) {
    json j;
    j["report"] = report_to_json(result.report);
    j["milestones"] = result.milestones;
    if (!a.out.empty()) j["out"] = a.out;
    std::cout << j.dump(2) << '\n';
  } else if (!quiet_logs()) {
    print_report(result.report, cfg.cost_mode);
    if (!a.out.empty()) std::cout << "plan written to " << a.out << '\n';
  }
}

struct VerifyArgs {
  std::uint64_t instances = 10000;
  int max_layers = 12;
  int max_groups = 64;
  std::uint64_t seed = 1;
  std::string oracle = "both";
  double negative_frac = 0.2;
  double min_groups_frac = 0.2;
  std::int64_t cost_max = 12;
  std::string repro_dir = ".";
  bool as_json = false;
};

int run_verify(const VerifyArgs& a) {
  VerifyOptions opts;
  opts.instances = a.instances;
  opts.seed = a.seed;
  opts.gen.max_layer_sets = a.max_layers;
  opts.gen.max_groups = a.max_groups;
  opts.gen.negative_fraction = a.negative_frac;
  opts.gen.min_groups_fraction = a.min_groups_frac;
  opts.gen.cost_hi = a.cost_max;
  if (a.oracle == "mck") {
    opts.oracle = OracleMode::mck;
  } else if (a.oracle == "exhaustive") {
    opts.oracle = OracleMode::exhaustive;
  } else if (a.oracle == "both") {
    opts.oracle = OracleMode::both;
  } else if (a.oracle == "none") {
    opts.oracle = OracleMode::none;
  } else {
    throw CLI::ValidationError(
        "--oracle must be mck, exhaustive, both or none");
  }
  if (!quiet_logs() && !a.as_json) {
    opts.progress = [](std::uint64_t done) {
      std::cerr << "\r" << done << " instances checked" << std::flush;
    };
  }

  const VerifyStats stats = run_verification(opts);
  if (opts.progress) std::cerr << '\n';

  for (const auto& v : stats.violations) {
    const fs::path path = fs::path(a.repro_dir) /
                          ("verify_repro_" + std::to_string(v.seed) + ".json");
    v.repro.save(path);
    std::cerr << "violation (seed " << v.seed << "): " << v.check
              << "\n  shrunk repro written to " << path
              << "\n  still fails: " << v.detail << '\n';
  }

  if (a.as_json) {
    json j;
    j["instances"] = stats.instances;
    j["oracle_checked"] = stats.oracle_checked;
    j["oracle_skipped"] = stats.oracle_skipped;
    j["mean_gap_greedy"] = stats.mean_gap_greedy;
    j["max_gap_greedy"] = stats.max_gap_greedy;
    j["mean_gap_nongreedy"] = stats.mean_gap_nongreedy;
    j["max_gap_nongreedy"] = stats.max_gap_nongreedy;
    j["violations"] = stats.violations.size();
    std::cout << j.dump(2) << '\n';
  } else if (!quiet_logs()) {
    std::cout << "checked " << stats.instances << " instances, "
              << stats.oracle_checked << " against the exact oracle ("
              << stats.oracle_skipped << " above the work cap)\n"
              << "greedy gap: mean " << 100.0 * stats.mean_gap_greedy
              << "%, max " << 100.0 * stats.max_gap_greedy << "%\n"
              << "nongreedy gap: mean " << 100.0 * stats.mean_gap_nongreedy
              << "%, max " << 100.0 * stats.max_gap_nongreedy << "%\n"
              << "violations: " << stats.violations.size() << '\n';
  }
  return stats.violations.empty() ? 0 : 1;
}

struct ReportArgs {
  std::string plan;
  bool as_json = false;
  double slope = 0.0;
  double intercept = 0.0;
  bool has_slope = false;
};

void run_report(const ReportArgs& a) {
  PrunePlan p = PrunePlan::load(a.plan);
  if (a.has_slope) {
    p.report.calibrated_ms = calibrated_latency_ms(p, a.slope, a.intercept);
  }
  if (a.as_json) {
    std::cout << report_to_json(p.report).dump(2) << '\n';
  } else {
    print_report(p.report, p.config.cost_mode);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latency-constrained structured pruning planner"};
  app.require_subcommand(1);

  LutBuildArgs lut_build;
  auto* cb = app.add_subcommand("lut-build",
                                "build a latency table from profile samples");
  cb->add_option("--samples", lut_build.samples, "profile CSV")->required();
  cb->add_option("--out", lut_build.out, "output table JSON")->required();
  cb->add_option("--device", lut_build.device, "device label");
  cb->add_option("--batch", lut_build.batch, "profiling batch size");
  cb->add_flag("--json", lut_build.as_json, "machine-readable summary");

  LutSynthArgs lut_synth;
  auto* cs = app.add_subcommand("lut-synth",
                                "synthesize a staircase latency table");
  cs->add_option("--network", lut_synth.network, "network spec JSON")
      ->required();
  cs->add_option("--out", lut_synth.out, "output table JSON")->required();
  cs->add_option("--step", lut_synth.step, "staircase step in channels");
  cs->add_option("--base", lut_synth.base, "base latency ms");
  cs->add_option("--rise", lut_synth.rise, "latency rise per step ms");
  cs->add_option("--noise", lut_synth.noise, "uniform noise amplitude ms");
  cs->add_option("--seed", lut_synth.seed, "noise seed");
  cs->add_option("--layer-step", lut_synth.layer_steps,
                 "per-layer step override, layer=step");
  cs->add_option("--device", lut_synth.device, "device label");
  cs->add_flag("--json", lut_synth.as_json, "machine-readable summary");

  PlanArgs plan_args;
  plan_args.scale = default_scale();
  auto* cp = app.add_subcommand("plan", "plan a pruning trajectory");
  cp->add_option("--network", plan_args.network, "network spec JSON")
      ->required();
  cp->add_option("--lut", plan_args.lut, "latency table JSON");
  cp->add_option("--importance", plan_args.importance, "importance CSV");
  cp->add_option("--provider", plan_args.provider,
                 "synthetic importance: fixed[:v], random[:seed], decay[:f]");
  cp->add_option("--budget-ratio", plan_args.budget_ratio,
                 "fraction of the initial cost to keep")
      ->each([&plan_args](const std::string&) { plan_args.has_ratio = true; });
  cp->add_option("--budget-units", plan_args.budget_units,
                 "budget in integer cost units")
      ->each([&plan_args](const std::string&) { plan_args.has_units = true; });
  cp->add_option("--steps", plan_args.steps, "number of milestones");
  cp->add_option("--schedule", plan_args.schedule, "geometric or linear");
  cp->add_option("--cost", plan_args.cost, "latency or flops");
  cp->add_option("--solver", plan_args.solver, "greedy or nongreedy");
  cp->add_option("--group", plan_args.group, "latency or fixed:N");
  cp->add_option("--scale", plan_args.scale, "ms to integer unit factor");
  cp->add_option("--seed", plan_args.seed, "seed for synthetic providers");
  cp->add_option("--protect", plan_args.protect,
                 "layer kept whole (repeatable; default first layer)");
  cp->add_flag("--no-protect", plan_args.no_protect, "protect no layer");
  cp->add_option("--out", plan_args.out, "plan artifact JSON");
  cp->add_option("--slope", plan_args.slope, "calibration slope")
      ->each([&plan_args](const std::string&) { plan_args.has_slope = true; });
  cp->add_option("--intercept", plan_args.intercept, "calibration intercept");
  cp->add_flag("--json", plan_args.as_json, "machine-readable report");

  VerifyArgs verify_args;
  auto* cv = app.add_subcommand("verify",
                                "randomized solver invariant checks");
  cv->add_option("--instances", verify_args.instances, "instance count");
  cv->add_option("--max-layers", verify_args.max_layers, "layer sets cap");
  cv->add_option("--max-groups", verify_args.max_groups, "groups per set cap");
  cv->add_option("--seed", verify_args.seed, "base seed");
  cv->add_option("--oracle", verify_args.oracle,
                 "mck, exhaustive, both or none");
  cv->add_option("--negative-frac", verify_args.negative_frac,
                 "fraction of instances with negative costs");
  cv->add_option("--min-groups-frac", verify_args.min_groups_frac,
                 "fraction of instances with forced prefixes");
  cv->add_option("--cost-max", verify_args.cost_max, "cost magnitude cap");
  cv->add_option("--repro-dir", verify_args.repro_dir,
                 "directory for violation repro dumps");
  cv->add_flag("--json", verify_args.as_json, "machine-readable stats");

  ReportArgs report_args;
  auto* cr = app.add_subcommand("report", "re-print a plan artifact");
  cr->add_option("--plan", report_args.plan, "plan JSON")->required();
  cr->add_option("--slope", report_args.slope, "calibration slope")
      ->each([&report_args](const std::string&) {
        report_args.has_slope = true;
      });
  cr->add_option("--intercept", report_args.intercept,
                 "calibration intercept");
  cr->add_flag("--json", report_args.as_json, "machine-readable report");

  try {
    app.parse(argc, argv);
    if (cb->parsed()) run_lut_build(lut_build);
    if (cs->parsed()) run_lut_synth(lut_synth);
    if (cp->parsed()) run_plan(plan_args);
    if (cv->parsed()) return run_verify(verify_args);
    if (cr->parsed()) run_report(report_args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
