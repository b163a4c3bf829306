#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace latprune {

class NetworkSpec;

// Measured latency surface of one layer, sampled at the listed channel
// counts. Both axes start at 0 (zero channels -> zero latency) and the out
// axis ends at the layer's full width. Off-grid queries interpolate
// bilinearly; the surface is not assumed monotone.
struct LayerGrid {
  std::vector<int> in_points;
  std::vector<int> out_points;
  std::vector<double> values_ms;  // row-major, [in][out]
  int granularity = 1;            // dominant out-axis spacing

  double at(std::size_t in_idx, std::size_t out_idx) const {
    return values_ms[in_idx * out_points.size() + out_idx];
  }
  int max_in() const { return in_points.back(); }
  int max_out() const { return out_points.back(); }

  // Checks axis ordering, zero edges and non-negative values.
  void check() const;
};

class LatencyTable {
 public:
  LatencyTable() = default;

  void add_layer(const std::string& id, LayerGrid grid);
  bool has_layer(const std::string& id) const;
  const LayerGrid& grid(const std::string& id) const;
  const std::map<std::string, LayerGrid>& grids() const { return grids_; }

  // Bilinear lookup of the layer latency at (p_in, p_out) channels.
  // Throws LookupError outside the grid range or for unknown layers.
  double lookup(const std::string& layer, double p_in, double p_out) const;

  std::string device = "unknown";
  int batch_size = 0;
  int profile_count = 0;

  static LatencyTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static LatencyTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, LayerGrid> grids_;
};

// Milliseconds -> integer latency units: round-half-away-from-zero of
// ms * scale.
std::int64_t scale_ms(double ms, int scale);

// Per-neuron latency contributions of one layer at a fixed input width.
// c[j-1] is the marginal cost of the j-th kept channel; entries may be
// negative on non-monotone surfaces. Prefix sums reproduce the scaled
// endpoint latencies exactly in integer units.
struct ContributionVector {
  std::string layer;
  int in_channels = 0;
  std::vector<std::int64_t> c;

  std::int64_t prefix_cost(int m) const;
};

ContributionVector contributions(const LatencyTable& table,
                                 const std::string& layer, int p_in,
                                 int scale);

// Spacing in channels between latency cliffs of the staircase pattern at the
// given input width. Jumps are taken between consecutive out-grid samples; a
// cliff is a jump above `threshold` times the largest jump. Fewer than two
// cliffs fall back to the grid granularity, except a lone cliff at the first
// sample, which means the whole layer sits on one plateau.
int detect_step_size(const LatencyTable& table, const std::string& layer,
                     int p_in, double threshold = 0.5);

struct StaircaseParams {
  int out_channels = 0;
  int in_channels = 0;
  int step = 1;
  double base_ms = 0.0;
  double rise_ms = 1.0;
  double noise_ms = 0.0;
  std::uint64_t seed = 0;
};

// Synthetic staircase surface: at full input width the out profile is
// base + rise * ceil(j / step) plus uniform noise in [-noise, +noise];
// latency ramps linearly with the input width. Deterministic under `seed`.
LayerGrid synth_staircase(const StaircaseParams& p);

// Reads profile rows `layer_id,in_channels,out_channels,latency_ms`,
// averaging repetitions of the same cell. Throws ParseError on malformed
// rows, negative latencies or incomplete grids.
LatencyTable ingest_samples(std::istream& in);
LatencyTable ingest_samples_file(const std::filesystem::path& path);

struct CalibrationFit {
  double slope = 0.0;
  double intercept = 0.0;
  double pearson_r = 0.0;
};

// Least-squares line and Pearson correlation between predicted and measured
// latency-reduction ratios. Needs >= 2 points and non-zero variance in the
// predictions.
CalibrationFit calibrate(std::span<const double> predicted,
                         std::span<const double> measured);

}  // namespace latprune
