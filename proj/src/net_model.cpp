#include "latprune/net_model.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latprune/errors.hpp"

namespace latprune {

NetworkSpec::NetworkSpec(std::vector<LayerSpec> layers,
                         std::vector<EdgeSpec> edges,
                         std::vector<CouplingGroup> couplings,
                         int input_channels)
    : layers_(std::move(layers)),
      edges_(std::move(edges)),
      couplings_(std::move(couplings)),
      input_channels_(input_channels) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    index_.emplace(layers_[i].id, i);
    preds_.emplace(layers_[i].id, std::vector<std::string>{});
  }
  for (const auto& e : edges_) {
    auto it = preds_.find(e.to);
    if (it != preds_.end()) it->second.push_back(e.from);
  }
  for (std::size_t g = 0; g < couplings_.size(); ++g) {
    for (const auto& id : couplings_[g].member_layers) {
      coupling_index_.emplace(id, g);  // overlaps caught by validate()
    }
  }
}

bool NetworkSpec::has_layer(const std::string& id) const {
  return index_.count(id) != 0;
}

const LayerSpec& NetworkSpec::layer(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown layer id: " + id);
  return layers_[it->second];
}

const std::vector<std::string>& NetworkSpec::predecessors(
    const std::string& id) const {
  auto it = preds_.find(id);
  if (it == preds_.end()) throw LookupError("unknown layer id: " + id);
  return it->second;
}

MergeKind NetworkSpec::merge_at(const std::string& id) const {
  for (const auto& e : edges_) {
    if (e.to == id) return e.merge;
  }
  return MergeKind::add;
}

const CouplingGroup* NetworkSpec::coupling_of(const std::string& id) const {
  auto it = coupling_index_.find(id);
  if (it == coupling_index_.end()) return nullptr;
  return &couplings_[it->second];
}

std::vector<std::string> NetworkSpec::topological_order() const {
  std::map<std::string, int> in_degree;
  std::map<std::string, std::vector<std::string>> succs;
  for (const auto& l : layers_) in_degree[l.id] = 0;
  for (const auto& e : edges_) {
    if (in_degree.count(e.to) && in_degree.count(e.from)) {
      ++in_degree[e.to];
      succs[e.from].push_back(e.to);
    }
  }
  // Kahn's algorithm; the ready list is seeded and grown in declaration /
  // edge order, so the result is deterministic.
  std::vector<std::string> ready;
  for (const auto& l : layers_) {
    if (in_degree[l.id] == 0) ready.push_back(l.id);
  }
  std::vector<std::string> order;
  order.reserve(layers_.size());
  std::size_t head = 0;
  while (head < ready.size()) {
    const std::string id = ready[head++];
    order.push_back(id);
    for (const auto& next : succs[id]) {
      if (--in_degree[next] == 0) ready.push_back(next);
    }
  }
  if (order.size() != layers_.size()) {
    throw Error("layer edges are not a DAG");
  }
  return order;
}

ValidationReport NetworkSpec::validate() const {
  ValidationReport report;
  auto flag = [&report](const std::string& msg) {
    report.violations.push_back(msg);
  };

  std::set<std::string> seen_ids;
  for (const auto& l : layers_) {
    if (!seen_ids.insert(l.id).second) flag("duplicate layer id: " + l.id);
    if (l.out_neurons < 1) flag("layer " + l.id + ": out_neurons < 1");
    if (l.kernel_size < 1) flag("layer " + l.id + ": kernel_size < 1");
    if (l.out_height < 1 || l.out_width < 1) {
      flag("layer " + l.id + ": output feature map dims < 1");
    }
    if (l.min_kept_groups < 0) flag("layer " + l.id + ": min_kept_groups < 0");
  }
  for (const auto& e : edges_) {
    if (!has_layer(e.from)) flag("edge from unknown layer: " + e.from);
    if (!has_layer(e.to)) flag("edge to unknown layer: " + e.to);
  }
  if (!report.ok()) return report;  // structural errors mask the rest

  try {
    topological_order();
  } catch (const Error&) {
    flag("not a DAG");
  }

  // Merge tags of a multi-input layer must agree, and add-merges need
  // width-locked predecessors (one coupling group, or all non-prunable).
  for (const auto& l : layers_) {
    const auto& ps = predecessors(l.id);
    if (ps.size() < 2) continue;
    std::set<int> tags;
    for (const auto& e : edges_) {
      if (e.to == l.id) tags.insert(static_cast<int>(e.merge));
    }
    if (tags.size() > 1) {
      flag("layer " + l.id + ": mixed merge tags on incoming edges");
      continue;
    }
    if (merge_at(l.id) == MergeKind::add) {
      std::set<int> widths;
      for (const auto& p : ps) widths.insert(layer(p).out_neurons);
      if (widths.size() > 1) {
        flag("layer " + l.id + ": add-merge width mismatch");
      }
      bool all_fixed = true;
      std::set<const CouplingGroup*> groups;
      for (const auto& p : ps) {
        if (layer(p).prunable) all_fixed = false;
        groups.insert(coupling_of(p));
      }
      if (!all_fixed && (groups.size() != 1 || *groups.begin() == nullptr)) {
        flag("layer " + l.id + ": add-merge predecessors are not coupled");
      }
    }
  }

  int sources = 0;
  for (const auto& l : layers_) {
    if (predecessors(l.id).empty()) ++sources;
  }
  if (sources != 1 && !layers_.empty()) {
    flag("expected exactly one source layer, found " +
         std::to_string(sources));
  }
  if (input_channels_ < 1) flag("input_channels < 1");

  std::set<std::string> coupled_seen;
  for (const auto& g : couplings_) {
    if (g.member_layers.size() < 2) {
      flag("coupling group with fewer than 2 members");
      continue;
    }
    std::set<int> widths;
    for (const auto& id : g.member_layers) {
      if (!has_layer(id)) {
        flag("coupling references unknown layer: " + id);
        continue;
      }
      widths.insert(layer(id).out_neurons);
      if (!coupled_seen.insert(id).second) {
        flag("layer " + id + " appears in more than one coupling group");
      }
    }
    if (widths.size() > 1) flag("coupling width mismatch");
  }
  return report;
}

int NetworkSpec::input_channels_of(const std::string& id,
                                   const KeptCounts& kept) const {
  const auto& ps = predecessors(id);  // throws on unknown id
  if (ps.empty()) return input_channels_;

  auto kept_of = [&](const std::string& p) {
    auto it = kept.find(p);
    if (it == kept.end()) {
      throw LookupError("kept counts missing layer: " + p);
    }
    return it->second;
  };

  if (ps.size() == 1) return kept_of(ps.front());
  if (merge_at(id) == MergeKind::concat) {
    int total = 0;
    for (const auto& p : ps) total += kept_of(p);
    return total;
  }
  const int width = kept_of(ps.front());
  for (const auto& p : ps) {
    if (kept_of(p) != width) {
      throw Error("add-merge at " + id + " with unequal kept widths");
    }
  }
  return width;
}

namespace {

MergeKind merge_from_string(const std::string& s) {
  if (s == "add") return MergeKind::add;
  if (s == "concat") return MergeKind::concat;
  throw ParseError("unknown merge kind: " + s);
}

std::string merge_to_string(MergeKind m) {
  return m == MergeKind::add ? "add" : "concat";
}

}  // namespace

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  try {
    std::vector<LayerSpec> layers;
    for (const auto& jl : j.at("layers")) {
      LayerSpec l;
      l.id = jl.at("id").get<std::string>();
      l.out_neurons = jl.at("out_neurons").get<int>();
      l.kernel_size = jl.value("kernel", 1);
      l.out_height = jl.value("out_h", 1);
      l.out_width = jl.value("out_w", 1);
      l.prunable = jl.value("prunable", true);
      l.min_kept_groups = jl.value("min_kept_groups", 0);
      layers.push_back(std::move(l));
    }
    std::vector<EdgeSpec> edges;
    for (const auto& je : j.value("edges", nlohmann::json::array())) {
      EdgeSpec e;
      e.from = je.at("from").get<std::string>();
      e.to = je.at("to").get<std::string>();
      e.merge = merge_from_string(je.value("merge", std::string("add")));
      edges.push_back(std::move(e));
    }
    std::vector<CouplingGroup> couplings;
    for (const auto& jc : j.value("couplings", nlohmann::json::array())) {
      CouplingGroup g;
      g.member_layers = jc.get<std::vector<std::string>>();
      couplings.push_back(std::move(g));
    }
    return NetworkSpec(std::move(layers), std::move(edges),
                       std::move(couplings), j.at("input_channels").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad network spec: ") + e.what());
  }
}

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json j;
  j["input_channels"] = input_channels_;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : layers_) {
    j["layers"].push_back({{"id", l.id},
                           {"out_neurons", l.out_neurons},
                           {"kernel", l.kernel_size},
                           {"out_h", l.out_height},
                           {"out_w", l.out_width},
                           {"prunable", l.prunable},
                           {"min_kept_groups", l.min_kept_groups}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : edges_) {
    j["edges"].push_back({{"from", e.from},
                          {"to", e.to},
                          {"merge", merge_to_string(e.merge)}});
  }
  j["couplings"] = nlohmann::json::array();
  for (const auto& g : couplings_) j["couplings"].push_back(g.member_layers);
  return j;
}

NetworkSpec NetworkSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network spec: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " +
                     e.what());
  }
  return from_json(j);
}

void NetworkSpec::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace latprune
