#include "latprune/importance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "latprune/errors.hpp"
#include "latprune/net_model.hpp"

namespace latprune {

double taylor_score(const ImportanceSample& s) {
  if (!std::isfinite(s.gamma) || !std::isfinite(s.beta) ||
      !std::isfinite(s.grad_gamma) || !std::isfinite(s.grad_beta)) {
    throw std::invalid_argument("importance sample with non-finite field");
  }
  return std::abs(s.grad_gamma * s.gamma + s.grad_beta * s.beta);
}

ImportanceVector ImportanceVector::from_scores(std::string layer,
                                               std::vector<double> scores) {
  ImportanceVector v;
  v.layer = std::move(layer);
  v.scores = std::move(scores);
  v.sample_count = 1;
  v.refresh_ranks();
  return v;
}

void ImportanceVector::refresh_ranks() {
  rank_order.resize(scores.size());
  std::iota(rank_order.begin(), rank_order.end(), 0);
  std::stable_sort(rank_order.begin(), rank_order.end(),
                   [this](int a, int b) { return scores[a] > scores[b]; });
}

ImportanceVector accumulate(ImportanceVector running,
                            std::span<const double> batch_scores) {
  if (running.scores.size() != batch_scores.size()) {
    throw std::invalid_argument("batch length does not match layer width");
  }
  const double n = static_cast<double>(running.sample_count);
  for (std::size_t i = 0; i < batch_scores.size(); ++i) {
    running.scores[i] = (running.scores[i] * n + batch_scores[i]) / (n + 1.0);
  }
  running.sample_count += 1;
  running.refresh_ranks();
  return running;
}

double layer_importance(const ImportanceVector& v, int p) {
  if (p < 0 || p > static_cast<int>(v.scores.size())) {
    throw std::invalid_argument("kept count out of range for layer " +
                                v.layer);
  }
  double total = 0.0;
  for (int r = 0; r < p; ++r) total += v.scores[v.rank_order[r]];
  return total;
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class FixedProvider : public ImportanceProvider {
 public:
  explicit FixedProvider(std::map<std::string, std::vector<double>> scores)
      : scores_(std::move(scores)) {}

  std::map<std::string, std::vector<double>> scores_at_step(
      int, const NetworkSpec& spec) override {
    std::map<std::string, std::vector<double>> out;
    for (const auto& l : spec.layers()) {
      if (!l.prunable) continue;
      auto it = scores_.find(l.id);
      if (it == scores_.end()) {
        throw Error("no importance scores for layer " + l.id);
      }
      if (static_cast<int>(it->second.size()) != l.out_neurons) {
        throw Error("importance width mismatch for layer " + l.id);
      }
      out.emplace(l.id, it->second);
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<double>> scores_;
};

class ConstantProvider : public ImportanceProvider {
 public:
  explicit ConstantProvider(double value) : value_(value) {
    if (!(value >= 0.0)) {
      throw std::invalid_argument("constant importance must be >= 0");
    }
  }

  std::map<std::string, std::vector<double>> scores_at_step(
      int, const NetworkSpec& spec) override {
    std::map<std::string, std::vector<double>> out;
    for (const auto& l : spec.layers()) {
      if (!l.prunable) continue;
      out.emplace(l.id, std::vector<double>(l.out_neurons, value_));
    }
    return out;
  }

 private:
  double value_;
};

class RandomProvider : public ImportanceProvider {
 public:
  explicit RandomProvider(std::uint64_t seed) : seed_(seed) {}

  std::map<std::string, std::vector<double>> scores_at_step(
      int step, const NetworkSpec& spec) override {
    std::map<std::string, std::vector<double>> out;
    for (const auto& l : spec.layers()) {
      if (!l.prunable) continue;
      std::vector<double> scores(l.out_neurons);
      const std::uint64_t base =
          mix64(seed_ ^ hash_str(l.id)) ^ mix64(static_cast<std::uint64_t>(step));
      for (int n = 0; n < l.out_neurons; ++n) {
        const std::uint64_t h = mix64(base + static_cast<std::uint64_t>(n));
        // (0, 1] so every neuron carries some importance
        scores[n] = 1.0 - static_cast<double>(h >> 11) * 0x1.0p-53;
      }
      out.emplace(l.id, std::move(scores));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
};

class DecayProvider : public ImportanceProvider {
 public:
  explicit DecayProvider(double factor) : factor_(factor) {
    if (!(factor > 0.0) || factor > 1.0) {
      throw std::invalid_argument("decay factor must be in (0, 1]");
    }
  }

  std::map<std::string, std::vector<double>> scores_at_step(
      int, const NetworkSpec& spec) override {
    std::map<std::string, std::vector<double>> out;
    for (const auto& l : spec.layers()) {
      if (!l.prunable) continue;
      std::vector<double> scores(l.out_neurons);
      double s = 1.0;
      for (int n = 0; n < l.out_neurons; ++n) {
        scores[n] = s;
        s *= factor_;
      }
      out.emplace(l.id, std::move(scores));
    }
    return out;
  }

 private:
  double factor_;
};

}  // namespace

std::unique_ptr<ImportanceProvider> make_fixed_provider(
    std::map<std::string, std::vector<double>> scores) {
  return std::make_unique<FixedProvider>(std::move(scores));
}

std::unique_ptr<ImportanceProvider> make_constant_provider(double value) {
  return std::make_unique<ConstantProvider>(value);
}

std::unique_ptr<ImportanceProvider> make_random_provider(std::uint64_t seed) {
  return std::make_unique<RandomProvider>(seed);
}

std::unique_ptr<ImportanceProvider> make_decay_provider(double factor) {
  return std::make_unique<DecayProvider>(factor);
}

std::unique_ptr<ImportanceProvider> load_importance_csv(
    const std::filesystem::path& path, const NetworkSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open importance file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty importance file");
  std::string header = line;
  header.erase(std::remove_if(header.begin(), header.end(),
                              [](unsigned char ch) {
                                return std::isspace(ch) != 0;
                              }),
               header.end());
  bool raw_stats = false;
  if (header == "layer_id,neuron_index,score") {
    raw_stats = false;
  } else if (header ==
             "layer_id,neuron_index,gamma,beta,grad_gamma,grad_beta") {
    raw_stats = true;
  } else {
    throw ParseError("unexpected importance header: " + line);
  }

  std::map<std::string, std::map<int, double>> by_layer;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(row, f, ',')) fields.push_back(f);
    const std::size_t expected = raw_stats ? 6u : 3u;
    if (fields.size() != expected) {
      throw ParseError("malformed importance row " + std::to_string(line_no));
    }
    try {
      const std::string& layer = fields[0];
      const int idx = std::stoi(fields[1]);
      double score = 0.0;
      if (raw_stats) {
        ImportanceSample s;
        s.gamma = std::stod(fields[2]);
        s.beta = std::stod(fields[3]);
        s.grad_gamma = std::stod(fields[4]);
        s.grad_beta = std::stod(fields[5]);
        score = taylor_score(s);
      } else {
        score = std::stod(fields[2]);
        if (!(score >= 0.0)) throw ParseError("negative score");
      }
      by_layer[layer][idx] = score;
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("malformed importance row " + std::to_string(line_no));
    }
  }

  std::map<std::string, std::vector<double>> scores;
  for (const auto& l : spec.layers()) {
    if (!l.prunable) continue;
    auto it = by_layer.find(l.id);
    if (it == by_layer.end()) {
      throw ParseError("importance file misses layer " + l.id);
    }
    std::vector<double> v(l.out_neurons, 0.0);
    if (static_cast<int>(it->second.size()) != l.out_neurons) {
      throw ParseError("importance file covers " +
                       std::to_string(it->second.size()) + " of " +
                       std::to_string(l.out_neurons) + " neurons in layer " +
                       l.id);
    }
    for (const auto& [idx, score] : it->second) {
      if (idx < 0 || idx >= l.out_neurons) {
        throw ParseError("neuron index out of range in layer " + l.id);
      }
      v[static_cast<std::size_t>(idx)] = score;
    }
    scores.emplace(l.id, std::move(v));
  }
  return make_fixed_provider(std::move(scores));
}

}  // namespace latprune
