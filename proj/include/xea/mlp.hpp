#pragma once

// Dense feed-forward binary classifier: ReLU hidden layers and a single
// sigmoid output unit. This is the attacker's white-box substitute.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xea/binary_io.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/math.hpp"
#include "xea/random.hpp"

namespace xea {

enum class Activation : std::uint8_t { relu, sigmoid, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  for (auto a : {Activation::relu, Activation::sigmoid, Activation::identity}) {
    if (to_string(a) == s) return a;
  }
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

inline double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::identity: return z;
  }
  return z;
}

/// Which output attributions and gradients refer to.
enum class OutputSpace : std::uint8_t { score, logit };

/// Fully connected layer; weights are row-major [out][in].
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> biases;
  Activation activation = Activation::relu;

  double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }
  double& w(std::size_t o, std::size_t i) { return weights[o * in + i]; }

  bool operator==(const DenseLayer&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double dropout_rate = 0.2;
  /// L2 penalty on weights (not biases), applied as decoupled shrinkage each step.
  double weight_decay = 0.1;
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden_dims = {32, 32};

  bool operator==(const TrainConfig&) const = default;
};

struct MlpModel {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;
  bool trained = false;
  TrainConfig config;

  bool operator==(const MlpModel&) const = default;
};

/// Pre-activations of every layer and the activations feeding them.
/// `activations[0]` is the input; `activations[l + 1]` is layer l's output.
struct ForwardRecord {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> activations;
  double score = 0.5;

  double logit() const { return pre.back().front(); }
  double output(OutputSpace space) const { return space == OutputSpace::score ? score : logit(); }
};

/// Glorot-uniform weights, zero biases.
inline MlpModel init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims, std::uint64_t seed) {
  if (input_dim < 1) throw ArgumentError("input_dim must be >= 1");
  MlpModel m;
  m.input_dim = input_dim;
  m.config.hidden_dims = hidden_dims;
  m.config.seed = seed;
  std::size_t in = input_dim;
  std::vector<std::size_t> outs = hidden_dims;
  outs.push_back(1);
  for (std::size_t l = 0; l < outs.size(); ++l) {
    if (outs[l] < 1) throw ArgumentError("hidden dims must be >= 1");
    DenseLayer layer;
    layer.in = in;
    layer.out = outs[l];
    layer.activation = l + 1 == outs.size() ? Activation::sigmoid : Activation::relu;
    layer.weights.resize(layer.in * layer.out);
    layer.biases.assign(layer.out, 0.0);
    const double s = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    CounterRng rng(derive_seed(seed, 10), l);
    for (auto& w : layer.weights) w = rng.uniform(-s, s);
    m.layers.push_back(std::move(layer));
    in = outs[l];
  }
  return m;
}

inline void check_input(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ArgumentError("input has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(model.input_dim));
  }
}

inline ForwardRecord forward(const MlpModel& model, std::span<const double> x) {
  check_input(model, x);
  ForwardRecord rec;
  rec.activations.emplace_back(x.begin(), x.end());
  for (const auto& layer : model.layers) {
    const auto& in = rec.activations.back();
    std::vector<double> z(layer.biases);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* row = &layer.weights[o * layer.in];
      double acc = 0.0;
      for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * in[i];
      z[o] += acc;
    }
    std::vector<double> a(z.size());
    for (std::size_t o = 0; o < z.size(); ++o) a[o] = apply_activation(layer.activation, z[o]);
    rec.pre.push_back(std::move(z));
    rec.activations.push_back(std::move(a));
  }
  rec.score = sigmoid(rec.logit());
  return rec;
}

inline double predict(const MlpModel& model, std::span<const double> x) { return forward(model, x).score; }

inline double predict(const MlpModel& model, std::span<const double> x, OutputSpace space) {
  return forward(model, x).output(space);
}

namespace detail {

inline double activation_derivative(Activation a, double z, double out) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return out * (1.0 - out);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

/// Backpropagates d(output)/d(last pre-activation) = `seed` to the input.
inline std::vector<double> backprop_to_input(const MlpModel& model, const ForwardRecord& rec, double seed) {
  std::vector<double> delta{seed};  // gradient w.r.t. pre-activation of current layer
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    std::vector<double> grad_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      if (delta[o] == 0.0) continue;
      const double* row = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) grad_in[i] += row[i] * delta[o];
    }
    if (l == 0) return grad_in;
    const auto& below = model.layers[l - 1];
    for (std::size_t i = 0; i < grad_in.size(); ++i) {
      grad_in[i] *= activation_derivative(below.activation, rec.pre[l - 1][i], rec.activations[l][i]);
    }
    delta = std::move(grad_in);
  }
  return {};
}

}  // namespace detail

/// Exact gradient of the chosen output with respect to the input.
inline std::vector<double> input_gradient(const MlpModel& model, std::span<const double> x,
                                          OutputSpace space = OutputSpace::score) {
  const auto rec = forward(model, x);
  const double seed = space == OutputSpace::score ? rec.score * (1.0 - rec.score) : 1.0;
  return detail::backprop_to_input(model, rec, seed);
}

/// Mean binary cross-entropy of the model on a dataset (inference mode).
inline double bce_loss(const MlpModel& model, const Dataset& ds) {
  double total = 0.0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    total += logit_loss(forward(model, ds.rows[s]).logit(), ds.labels[s]);
  }
  return ds.size() == 0 ? 0.0 : total / static_cast<double>(ds.size());
}

inline double accuracy(const MlpModel& model, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    ok += (predict(model, ds.rows[s]) >= 0.5 ? 1 : 0) == ds.labels[s];
  }
  return ds.size() == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(ds.size());
}

/// Mini-batch SGD on binary cross-entropy with inverted dropout on hidden
/// activations. Optimization runs on inputs standardized with the training
/// set's mean and sd; the initial first-layer weights are read as weights
/// over those standardized inputs. The scaling is folded into the first
/// layer afterwards, so the returned model consumes raw features.
inline MlpModel train(MlpModel model, const Dataset& ds, const TrainConfig& config) {
  if (ds.size() == 0) throw TrainingError("cannot train on an empty dataset");
  if (ds.dim() != model.input_dim) throw TrainingError("dataset dimension does not match model input");
  if (!(config.learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) throw ArgumentError("dropout_rate must be in [0, 1)");
  if (!(config.weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (config.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  for (int y : ds.labels) {
    if (y != 0 && y != 1) throw TrainingError("labels must be 0 or 1");
  }
  auto echo = config;
  echo.hidden_dims.clear();
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) echo.hidden_dims.push_back(model.layers[l].out);
  model.config = echo;
  model.trained = true;
  if (config.epochs == 0) return model;

  const std::size_t F = model.input_dim;
  const std::size_t n = ds.size();
  std::vector<double> mean(F, 0.0), sd(F, 0.0);
  for (const auto& row : ds.rows) {
    for (std::size_t i = 0; i < F; ++i) mean[i] += row[i];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& row : ds.rows) {
    for (std::size_t i = 0; i < F; ++i) sd[i] += (row[i] - mean[i]) * (row[i] - mean[i]);
  }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }

  // The incoming first layer is taken to act on standardized inputs, as if
  // a scaling layer sat in front of it; the scaling is folded in at the end.
  auto& first = model.layers.front();
  std::vector<std::vector<double>> inputs(n, std::vector<double>(F));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < F; ++i) inputs[s][i] = (ds.rows[s][i] - mean[i]) / sd[i];
  }

  const std::size_t L = model.layers.size();
  const double keep = 1.0 - config.dropout_rate;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<std::vector<double>> grad_w(L), grad_b(L);
  for (std::size_t l = 0; l < L; ++l) {
    grad_w[l].resize(model.layers[l].weights.size());
    grad_b[l].resize(model.layers[l].biases.size());
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    CounterRng shuffle_rng(derive_seed(config.seed, 20), epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    CounterRng dropout_rng(derive_seed(config.seed, 21), epoch);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      for (std::size_t l = 0; l < L; ++l) {
        std::fill(grad_w[l].begin(), grad_w[l].end(), 0.0);
        std::fill(grad_b[l].begin(), grad_b[l].end(), 0.0);
      }
      for (std::size_t b = start; b < stop; ++b) {
        const auto s = order[b];
        // Forward with dropout masks on hidden outputs.
        std::vector<std::vector<double>> acts{inputs[s]};
        std::vector<std::vector<double>> pres;
        std::vector<std::vector<double>> masks;
        for (std::size_t l = 0; l < L; ++l) {
          const auto& layer = model.layers[l];
          const auto& in = acts.back();
          std::vector<double> z(layer.biases);
          for (std::size_t o = 0; o < layer.out; ++o) {
            const double* row = &layer.weights[o * layer.in];
            double acc = 0.0;
            for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * in[i];
            z[o] += acc;
          }
          std::vector<double> a(z.size());
          std::vector<double> mask(z.size(), 1.0);
          for (std::size_t o = 0; o < z.size(); ++o) {
            a[o] = apply_activation(layer.activation, z[o]);
            if (l + 1 < L && config.dropout_rate > 0.0) {
              mask[o] = dropout_rng.uniform() < keep ? 1.0 / keep : 0.0;
              a[o] *= mask[o];
            }
          }
          pres.push_back(std::move(z));
          masks.push_back(std::move(mask));
          acts.push_back(std::move(a));
        }
        const double z_out = pres.back()[0];
        const double p = sigmoid(z_out);
        const int y = ds.labels[s];
        epoch_loss += logit_loss(z_out, y);

        std::vector<double> delta{p - static_cast<double>(y)};
        for (std::size_t l = L; l-- > 0;) {
          const auto& layer = model.layers[l];
          const auto& in = acts[l];
          for (std::size_t o = 0; o < layer.out; ++o) {
            if (delta[o] == 0.0) continue;
            grad_b[l][o] += delta[o];
            double* gw = &grad_w[l][o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) gw[i] += delta[o] * in[i];
          }
          if (l == 0) break;
          std::vector<double> next(layer.in, 0.0);
          for (std::size_t o = 0; o < layer.out; ++o) {
            if (delta[o] == 0.0) continue;
            const double* row = &layer.weights[o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) next[i] += row[i] * delta[o];
          }
          const auto& below = model.layers[l - 1];
          for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] *= masks[l - 1][i] *
                       detail::activation_derivative(below.activation, pres[l - 1][i], acts[l][i]);
          }
          delta = std::move(next);
        }
      }
      const double scale = config.learning_rate / static_cast<double>(stop - start);
      const double shrink = 1.0 - config.learning_rate * config.weight_decay;
      for (std::size_t l = 0; l < L; ++l) {
        auto& layer = model.layers[l];
        for (std::size_t k = 0; k < layer.weights.size(); ++k) {
          layer.weights[k] = shrink * layer.weights[k] - scale * grad_w[l][k];
        }
        for (std::size_t k = 0; k < layer.biases.size(); ++k) layer.biases[k] -= scale * grad_b[l][k];
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
    }
  }

  // Fold the standardization back into the first layer.
  for (std::size_t o = 0; o < first.out; ++o) {
    for (std::size_t i = 0; i < F; ++i) {
      first.w(o, i) /= sd[i];
      first.biases[o] -= first.w(o, i) * mean[i];
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Model file:
//   XEAMLP1\n
//   {"version":1,"input_dim":..,"layers":[{"in":..,"out":..,"activation":..}],
//    "trained":..,"config":{...},"input_features":[...]}\n
//   per layer: in*out weights (row-major) then out biases, little-endian f64
// `input_features` optionally records which columns of a wider feature
// space the model consumes.
// ---------------------------------------------------------------------------

inline constexpr int kMlpFormatVersion = 1;

inline void write_mlp(std::ostream& out, const MlpModel& model,
                      const std::vector<std::size_t>& input_features = {}) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"activation", std::string(to_string(l.activation))}});
  }
  const auto& c = model.config;
  nlohmann::json header = {
      {"version", kMlpFormatVersion},
      {"input_dim", model.input_dim},
      {"layers", layers},
      {"trained", model.trained},
      {"config",
       {{"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"dropout_rate", c.dropout_rate},
        {"weight_decay", c.weight_decay},
        {"seed", c.seed},
        {"hidden_dims", c.hidden_dims}}},
      {"input_features", input_features},
  };
  out << "XEAMLP1\n" << header.dump() << '\n';
  for (const auto& l : model.layers) {
    for (double w : l.weights) detail::write_le(out, w);
    for (double b : l.biases) detail::write_le(out, b);
  }
}

struct LoadedMlp {
  MlpModel model;
  std::vector<std::size_t> input_features;
};

inline LoadedMlp read_mlp(std::istream& in) {
  const std::string what = "mlp model";
  if (detail::read_line(in, what) != "XEAMLP1") throw FormatError("mlp model: bad magic");
  LoadedMlp loaded;
  auto& m = loaded.model;
  try {
    const auto header = nlohmann::json::parse(detail::read_line(in, what));
    if (header.at("version").get<int>() != kMlpFormatVersion) throw FormatError("mlp model: unsupported version");
    m.input_dim = header.at("input_dim").get<std::size_t>();
    m.trained = header.at("trained").get<bool>();
    const auto& c = header.at("config");
    m.config.epochs = c.at("epochs").get<std::size_t>();
    m.config.batch_size = c.at("batch_size").get<std::size_t>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.dropout_rate = c.at("dropout_rate").get<double>();
    m.config.weight_decay = c.value("weight_decay", 0.0);
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
    loaded.input_features = header.value("input_features", std::vector<std::size_t>{});
    std::size_t expect_in = m.input_dim;
    for (const auto& lj : header.at("layers")) {
      DenseLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.activation = activation_from_string(lj.at("activation").get<std::string>());
      if (l.in != expect_in) throw FormatError("mlp model: layer dimensions do not chain");
      expect_in = l.out;
      m.layers.push_back(std::move(l));
    }
    if (m.layers.empty() || m.layers.back().out != 1) throw FormatError("mlp model: output layer must have one unit");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mlp model: invalid header: ") + e.what());
  }
  for (auto& l : m.layers) {
    l.weights.resize(l.in * l.out);
    l.biases.resize(l.out);
    for (auto& w : l.weights) w = detail::read_le<double>(in, what);
    for (auto& b : l.biases) b = detail::read_le<double>(in, what);
  }
  return loaded;
}

inline void save_model(const MlpModel& model, const std::string& path,
                       const std::vector<std::size_t>& input_features = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_mlp(out, model, input_features);
}

inline LoadedMlp load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_mlp(in);
}

inline MlpModel load_model(const std::string& path) { return load_model_file(path).model; }

}  // namespace xea
