#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace latprune {

class NetworkSpec;

// Batch-normalization statistics of one neuron.
struct ImportanceSample {
  double gamma = 0.0;
  double beta = 0.0;
  double grad_gamma = 0.0;
  double grad_beta = 0.0;
};

// |g_gamma * gamma + g_beta * beta|. Throws std::invalid_argument on
// non-finite inputs.
double taylor_score(const ImportanceSample& s);

// Per-neuron scores of one layer with a descending rank order.
// Ties rank the lower original index first.
struct ImportanceVector {
  std::string layer;
  std::vector<double> scores;
  std::vector<int> rank_order;
  int sample_count = 0;

  static ImportanceVector from_scores(std::string layer,
                                      std::vector<double> scores);
  void refresh_ranks();
};

// Running mean over minibatches; refreshes the rank order.
ImportanceVector accumulate(ImportanceVector running,
                            std::span<const double> batch_scores);

// Sum of the top-p ranked scores.
double layer_importance(const ImportanceVector& v, int p);

// Source of per-neuron scores for every prunable layer, indexed by original
// neuron id. Steps are 1-based milestone indices; file-backed providers
// replay the same scores each step, synthetic ones may vary.
class ImportanceProvider {
 public:
  virtual ~ImportanceProvider() = default;
  virtual std::map<std::string, std::vector<double>> scores_at_step(
      int step, const NetworkSpec& spec) = 0;
};

std::unique_ptr<ImportanceProvider> make_fixed_provider(
    std::map<std::string, std::vector<double>> scores);
// Every neuron gets the same constant score.
std::unique_ptr<ImportanceProvider> make_constant_provider(double value);
// Fresh uniform(0,1] scores per step, deterministic under the seed.
std::unique_ptr<ImportanceProvider> make_random_provider(std::uint64_t seed);
// Score decays geometrically with the original neuron index.
std::unique_ptr<ImportanceProvider> make_decay_provider(double factor);

// CSV loader. Accepts `layer_id,neuron_index,score` or raw statistics
// `layer_id,neuron_index,gamma,beta,grad_gamma,grad_beta` (scores computed
// via taylor_score). Every prunable layer must be fully covered.
std::unique_ptr<ImportanceProvider> load_importance_csv(
    const std::filesystem::path& path, const NetworkSpec& spec);

}  // namespace latprune
