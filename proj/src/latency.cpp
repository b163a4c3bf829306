#include "latprune/latency.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latprune/errors.hpp"

namespace latprune {

namespace {

// splitmix64; used instead of <random> distributions so synthesized surfaces
// are byte-identical across standard libraries.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_from_bits(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;  // [0, 1)
}

// Index of the grid segment containing q, plus the interpolation weight.
struct AxisPos {
  std::size_t lo;
  std::size_t hi;
  double t;
};

AxisPos locate(const std::vector<int>& points, double q,
               const std::string& what) {
  if (q < points.front() || q > points.back()) {
    throw LookupError(what + " " + std::to_string(q) +
                      " outside grid range [" +
                      std::to_string(points.front()) + ", " +
                      std::to_string(points.back()) + "]");
  }
  auto it = std::lower_bound(points.begin(), points.end(), q);
  std::size_t hi = static_cast<std::size_t>(it - points.begin());
  if (points[hi] == q) return {hi, hi, 0.0};
  std::size_t lo = hi - 1;
  double t = (q - points[lo]) / (points[hi] - points[lo]);
  return {lo, hi, t};
}

int modal_spacing(const std::vector<int>& points) {
  std::map<int, int> counts;
  for (std::size_t i = 1; i < points.size(); ++i) {
    ++counts[points[i] - points[i - 1]];
  }
  int best = 1, best_count = 0;
  for (const auto& [d, n] : counts) {
    if (n > best_count) {
      best = d;
      best_count = n;
    }
  }
  return best;
}

}  // namespace

void LayerGrid::check() const {
  auto ascending_from_zero = [](const std::vector<int>& v) {
    if (v.empty() || v.front() != 0) return false;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] <= v[i - 1]) return false;
    }
    return true;
  };
  if (!ascending_from_zero(in_points) || !ascending_from_zero(out_points)) {
    throw Error("grid axes must ascend from 0");
  }
  if (values_ms.size() != in_points.size() * out_points.size()) {
    throw Error("grid value count does not match axes");
  }
  for (double v : values_ms) {
    if (!(v >= 0.0)) throw Error("grid holds a negative or NaN latency");
  }
  for (std::size_t i = 0; i < in_points.size(); ++i) {
    if (at(i, 0) != 0.0) throw Error("latency at 0 output channels must be 0");
  }
  for (std::size_t o = 0; o < out_points.size(); ++o) {
    if (at(0, o) != 0.0) throw Error("latency at 0 input channels must be 0");
  }
}

void LatencyTable::add_layer(const std::string& id, LayerGrid grid) {
  grid.check();
  grids_[id] = std::move(grid);
}

bool LatencyTable::has_layer(const std::string& id) const {
  return grids_.count(id) != 0;
}

const LayerGrid& LatencyTable::grid(const std::string& id) const {
  auto it = grids_.find(id);
  if (it == grids_.end()) throw LookupError("no latency grid for layer " + id);
  return it->second;
}

double LatencyTable::lookup(const std::string& layer, double p_in,
                            double p_out) const {
  const LayerGrid& g = grid(layer);
  const AxisPos ii = locate(g.in_points, p_in, "in_channels");
  const AxisPos oo = locate(g.out_points, p_out, "out_channels");
  const double v00 = g.at(ii.lo, oo.lo);
  const double v01 = g.at(ii.lo, oo.hi);
  const double v10 = g.at(ii.hi, oo.lo);
  const double v11 = g.at(ii.hi, oo.hi);
  const double lo = v00 + (v01 - v00) * oo.t;
  const double hi = v10 + (v11 - v10) * oo.t;
  return lo + (hi - lo) * ii.t;
}

std::int64_t scale_ms(double ms, int scale) {
  if (scale < 1) throw std::invalid_argument("scale must be >= 1");
  return std::llround(ms * scale);  // llround is half-away-from-zero
}

std::int64_t ContributionVector::prefix_cost(int m) const {
  if (m < 0 || m > static_cast<int>(c.size())) {
    throw std::invalid_argument("prefix length out of range");
  }
  return std::accumulate(c.begin(), c.begin() + m, std::int64_t{0});
}

ContributionVector contributions(const LatencyTable& table,
                                 const std::string& layer, int p_in,
                                 int scale) {
  const LayerGrid& g = table.grid(layer);
  ContributionVector cv;
  cv.layer = layer;
  cv.in_channels = p_in;
  cv.c.reserve(g.max_out());
  // Differences of already-scaled prefix values, so prefix sums telescope
  // exactly in integer units even when the surface dips.
  std::int64_t prev = scale_ms(table.lookup(layer, p_in, 0.0), scale);
  for (int j = 1; j <= g.max_out(); ++j) {
    const std::int64_t cur = scale_ms(table.lookup(layer, p_in, j), scale);
    cv.c.push_back(cur - prev);
    prev = cur;
  }
  return cv;
}

int detect_step_size(const LatencyTable& table, const std::string& layer,
                     int p_in, double threshold) {
  const LayerGrid& g = table.grid(layer);
  if (g.out_points.size() < 3) return g.granularity;

  std::vector<double> jumps(g.out_points.size() - 1);
  double prev = table.lookup(layer, p_in, g.out_points[0]);
  double max_jump = 0.0;
  for (std::size_t k = 1; k < g.out_points.size(); ++k) {
    const double cur = table.lookup(layer, p_in, g.out_points[k]);
    jumps[k - 1] = cur - prev;
    max_jump = std::max(max_jump, jumps[k - 1]);
    prev = cur;
  }
  if (max_jump <= 0.0) return g.granularity;

  std::vector<int> cliffs;  // channel positions of the jump targets
  for (std::size_t k = 0; k < jumps.size(); ++k) {
    if (jumps[k] > threshold * max_jump) cliffs.push_back(g.out_points[k + 1]);
  }
  if (cliffs.size() == 1) {
    // A lone cliff at the first sample means one plateau spans the layer.
    return cliffs.front() == g.out_points[1] ? g.max_out() : g.granularity;
  }
  if (cliffs.size() < 2) return g.granularity;

  std::map<int, int> spacing_counts;
  for (std::size_t i = 1; i < cliffs.size(); ++i) {
    ++spacing_counts[cliffs[i] - cliffs[i - 1]];
  }
  int best = g.granularity, best_count = 0;
  for (const auto& [d, n] : spacing_counts) {
    if (n > best_count) {  // ties resolve to the smallest spacing
      best = d;
      best_count = n;
    }
  }
  return best;
}

LayerGrid synth_staircase(const StaircaseParams& p) {
  if (p.step < 1) throw std::invalid_argument("step must be >= 1");
  if (p.out_channels < p.step) {
    throw std::invalid_argument("out_channels must be >= step");
  }
  if (p.in_channels < 1) {
    throw std::invalid_argument("in_channels must be >= 1");
  }
  if (p.noise_ms < 0.0) throw std::invalid_argument("noise must be >= 0");

  LayerGrid g;
  g.granularity = 1;
  g.out_points.resize(p.out_channels + 1);
  std::iota(g.out_points.begin(), g.out_points.end(), 0);
  // Latency ramps linearly with the input width, which bilinear
  // interpolation reconstructs exactly from the two endpoints.
  g.in_points = p.in_channels == 1 ? std::vector<int>{0, 1}
                                   : std::vector<int>{0, p.in_channels};
  g.values_ms.assign(g.in_points.size() * g.out_points.size(), 0.0);
  for (std::size_t ii = 1; ii < g.in_points.size(); ++ii) {
    const double ramp =
        static_cast<double>(g.in_points[ii]) / p.in_channels;
    for (int j = 1; j <= p.out_channels; ++j) {
      double v = p.base_ms + p.rise_ms * ((j + p.step - 1) / p.step);
      if (p.noise_ms > 0.0) {
        const std::uint64_t h =
            mix64(p.seed ^ mix64(static_cast<std::uint64_t>(j) * 0x10001 +
                                 static_cast<std::uint64_t>(ii)));
        v += p.noise_ms * (2.0 * unit_from_bits(h) - 1.0);
      }
      g.values_ms[ii * g.out_points.size() + static_cast<std::size_t>(j)] =
          std::max(0.0, ramp * v);
    }
  }
  g.check();
  return g;
}

LatencyTable ingest_samples(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty sample file");
  {
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](unsigned char ch) {
                                  return std::isspace(ch) != 0;
                                }),
                 header.end());
    if (header != "layer_id,in_channels,out_channels,latency_ms") {
      throw ParseError("unexpected sample header: " + line);
    }
  }

  struct Cell {
    double sum = 0.0;
    int count = 0;
  };
  std::map<std::string, std::map<std::pair<int, int>, Cell>> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string layer, in_s, out_s, ms_s;
    if (!std::getline(row, layer, ',') || !std::getline(row, in_s, ',') ||
        !std::getline(row, out_s, ',') || !std::getline(row, ms_s)) {
      throw ParseError("malformed sample row " + std::to_string(line_no) +
                       ": " + line);
    }
    int i = 0, o = 0;
    double ms = 0.0;
    try {
      if (ms_s.find(',') != std::string::npos) throw ParseError("extra field");
      i = std::stoi(in_s);
      o = std::stoi(out_s);
      ms = std::stod(ms_s);
    } catch (const std::exception&) {
      throw ParseError("malformed sample row " + std::to_string(line_no) +
                       ": " + line);
    }
    if (i < 0 || o < 0) {
      throw ParseError("negative channel count at row " +
                       std::to_string(line_no));
    }
    if (!(ms >= 0.0)) {
      throw ParseError("negative latency at row " + std::to_string(line_no));
    }
    if ((i == 0 || o == 0) && ms != 0.0) {
      throw ParseError("nonzero latency for zero channels at row " +
                       std::to_string(line_no));
    }
    Cell& cell = cells[layer][{i, o}];
    cell.sum += ms;
    cell.count += 1;
  }
  if (cells.empty()) throw ParseError("sample file holds no rows");

  LatencyTable table;
  int max_reps = 0;
  for (auto& [layer, layer_cells] : cells) {
    std::vector<int> ins, outs;
    for (const auto& [key, cell] : layer_cells) {
      ins.push_back(key.first);
      outs.push_back(key.second);
      max_reps = std::max(max_reps, cell.count);
    }
    std::sort(ins.begin(), ins.end());
    ins.erase(std::unique(ins.begin(), ins.end()), ins.end());
    std::sort(outs.begin(), outs.end());
    outs.erase(std::unique(outs.begin(), outs.end()), outs.end());
    // The zero row and column may be omitted from the file; they are
    // implicitly zero.
    if (ins.empty() || ins.front() != 0) ins.insert(ins.begin(), 0);
    if (outs.empty() || outs.front() != 0) outs.insert(outs.begin(), 0);

    LayerGrid g;
    g.in_points = ins;
    g.out_points = outs;
    g.granularity = modal_spacing(outs);
    g.values_ms.assign(ins.size() * outs.size(), 0.0);
    for (std::size_t ii = 0; ii < ins.size(); ++ii) {
      for (std::size_t oo = 0; oo < outs.size(); ++oo) {
        if (ins[ii] == 0 || outs[oo] == 0) continue;
        auto it = layer_cells.find({ins[ii], outs[oo]});
        if (it == layer_cells.end()) {
          throw ParseError("incomplete grid for layer " + layer +
                           ": missing sample at (" + std::to_string(ins[ii]) +
                           ", " + std::to_string(outs[oo]) + ")");
        }
        g.values_ms[ii * outs.size() + oo] = it->second.sum / it->second.count;
      }
    }
    table.add_layer(layer, std::move(g));
  }
  table.profile_count = max_reps;
  return table;
}

LatencyTable ingest_samples_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open sample file: " + path.string());
  return ingest_samples(in);
}

CalibrationFit calibrate(std::span<const double> predicted,
                         std::span<const double> measured) {
  if (predicted.size() != measured.size()) {
    throw std::invalid_argument("calibration series differ in length");
  }
  const std::size_t n = predicted.size();
  if (n < 2) throw Error("calibration needs at least 2 paired observations");

  const double mx = std::accumulate(predicted.begin(), predicted.end(), 0.0) /
                    static_cast<double>(n);
  const double my = std::accumulate(measured.begin(), measured.end(), 0.0) /
                    static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = predicted[i] - mx;
    const double dy = measured[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error("calibration series have zero variance");
  }

  CalibrationFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.pearson_r = sxy / std::sqrt(sxx * syy);
  return fit;
}

LatencyTable LatencyTable::from_json(const nlohmann::json& j) {
  try {
    LatencyTable t;
    t.device = j.value("device", std::string("unknown"));
    t.batch_size = j.value("batch_size", 0);
    t.profile_count = j.value("profile_count", 0);
    for (const auto& [id, jg] : j.at("layers").items()) {
      LayerGrid g;
      g.in_points = jg.at("in_points").get<std::vector<int>>();
      g.out_points = jg.at("out_points").get<std::vector<int>>();
      g.values_ms = jg.at("values_ms").get<std::vector<double>>();
      g.granularity = jg.value("granularity", 1);
      t.add_layer(id, std::move(g));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad latency table: ") + e.what());
  }
}

nlohmann::json LatencyTable::to_json() const {
  nlohmann::json j;
  j["device"] = device;
  j["batch_size"] = batch_size;
  j["profile_count"] = profile_count;
  j["layers"] = nlohmann::json::object();
  for (const auto& [id, g] : grids_) {
    j["layers"][id] = {{"in_points", g.in_points},
                       {"out_points", g.out_points},
                       {"values_ms", g.values_ms},
                       {"granularity", g.granularity}};
  }
  return j;
}

LatencyTable LatencyTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open latency table: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " +
                     e.what());
  }
  return from_json(j);
}

void LatencyTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace latprune
