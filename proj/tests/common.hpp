#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "xea/xea.hpp"

namespace xea::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xea_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Dataset desk_dataset(std::size_t n = 4000, std::uint64_t seed = 7) {
  return generate(make_schema(default_widths()), n, 12, 0.5, seed);
}

/// Small trained substitute for attribution checks; cached per process.
inline const MlpModel& small_trained_mlp() {
  static const MlpModel model = [] {
    const auto ds = generate(make_schema(default_widths()), 800, 12, 0.5, 11);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 3;
    return train(init_mlp(ds.dim(), cfg.hidden_dims, cfg.seed), ds, cfg);
  }();
  return model;
}

/// Random small network with the given dims; not trained but flagged so.
inline MlpModel random_mlp(std::size_t in, std::vector<std::size_t> hidden, std::uint64_t seed) {
  auto m = init_mlp(in, hidden, seed);
  CounterRng rng(seed, 99);
  for (auto& l : m.layers) {
    for (auto& b : l.biases) b = rng.uniform(-0.5, 0.5);
  }
  m.trained = true;
  return m;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  CounterRng rng(seed, 7);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace xea::testing
