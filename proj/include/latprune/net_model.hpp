#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace latprune {

// One convolution-like layer. `out_neurons` is the channel count the planner
// prunes; kernel size and output feature-map geometry feed the MAC model.
struct LayerSpec {
  std::string id;
  int out_neurons = 0;
  int kernel_size = 1;
  int out_height = 1;
  int out_width = 1;
  bool prunable = true;
  int min_kept_groups = 0;
};

// How a layer with several predecessors combines their channels.
enum class MergeKind { add, concat };

struct EdgeSpec {
  std::string from;
  std::string to;
  MergeKind merge = MergeKind::add;
};

// Layers whose channels share indices and must be pruned jointly
// (residual adds, group convolutions).
struct CouplingGroup {
  std::vector<std::string> member_layers;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Immutable network description: layers, predecessor edges forming a DAG
// with a single source, and coupling groups. Safe to share across threads
// once constructed.
class NetworkSpec {
 public:
  using KeptCounts = std::map<std::string, int>;

  NetworkSpec() = default;
  NetworkSpec(std::vector<LayerSpec> layers, std::vector<EdgeSpec> edges,
              std::vector<CouplingGroup> couplings, int input_channels);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<EdgeSpec>& edges() const { return edges_; }
  const std::vector<CouplingGroup>& couplings() const { return couplings_; }
  int input_channels() const { return input_channels_; }

  bool has_layer(const std::string& id) const;
  const LayerSpec& layer(const std::string& id) const;
  const std::vector<std::string>& predecessors(const std::string& id) const;

  // Merge semantics at a layer's input; meaningful when it has >1 predecessor.
  MergeKind merge_at(const std::string& id) const;

  // Coupling group containing `id`, or nullptr for uncoupled layers.
  const CouplingGroup* coupling_of(const std::string& id) const;

  // Layer ids in a deterministic topological order of the edge DAG.
  // Throws Error if the edges are cyclic.
  std::vector<std::string> topological_order() const;

  ValidationReport validate() const;

  // Input channel count of `id` when each layer keeps `kept[id]` channels.
  // The source layer reads the fixed network input width; add-merges require
  // equal predecessor widths, concat-merges sum them.
  int input_channels_of(const std::string& id, const KeptCounts& kept) const;

  static NetworkSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static NetworkSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<EdgeSpec> edges_;
  std::vector<CouplingGroup> couplings_;
  int input_channels_ = 0;

  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::string>> preds_;
  std::map<std::string, std::size_t> coupling_index_;
};

}  // namespace latprune
