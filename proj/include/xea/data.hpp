#pragma once

// Feature schema, synthetic Ember-shaped data generation, splits, feature
// masks and their text file formats.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xea/binary_io.hpp"
#include "xea/error.hpp"
#include "xea/random.hpp"

namespace xea {

enum class FeatureGroup : std::uint8_t {
  byte_histogram,
  byte_entropy,
  strings,
  general,
  coff_header,
  sections,
  imports,
  exports,
  data_directories,
};

inline constexpr std::size_t kGroupCount = 9;

inline constexpr std::array<std::string_view, kGroupCount> kGroupNames = {
    "byte_histogram", "byte_entropy", "strings",  "general",          "coff_header",
    "sections",       "imports",      "exports",  "data_directories",
};

inline std::string_view to_string(FeatureGroup g) { return kGroupNames[static_cast<std::size_t>(g)]; }

inline std::optional<FeatureGroup> group_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kGroupCount; ++i) {
    if (kGroupNames[i] == name) return static_cast<FeatureGroup>(i);
  }
  return std::nullopt;
}

/// Groups whose members form a probability distribution per sample.
inline constexpr bool is_simplex_group(FeatureGroup g) {
  return g == FeatureGroup::byte_histogram || g == FeatureGroup::byte_entropy ||
         g == FeatureGroup::strings;
}

enum class FeatureKind : std::uint8_t { continuous, count, bounded_int, simplex_component };

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::count: return "count";
    case FeatureKind::bounded_int: return "bounded_int";
    case FeatureKind::simplex_component: return "simplex_component";
  }
  return "?";
}

inline std::optional<FeatureKind> kind_from_string(std::string_view s) {
  for (auto k : {FeatureKind::continuous, FeatureKind::count, FeatureKind::bounded_int,
                 FeatureKind::simplex_component}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline constexpr bool is_integral_kind(FeatureKind k) {
  return k == FeatureKind::count || k == FeatureKind::bounded_int;
}

struct FeatureDescriptor {
  std::string name;
  FeatureGroup group = FeatureGroup::general;
  FeatureKind kind = FeatureKind::continuous;
  double lo = 0.0;
  double hi = 1.0;

  bool operator==(const FeatureDescriptor&) const = default;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const IndexRange&) const = default;
};

/// Ordered features, each in exactly one group; groups occupy contiguous
/// index ranges in the fixed Ember order. Groups may be empty (for example
/// after projecting onto a feature subset).
class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<FeatureDescriptor> features) : features_(std::move(features)) {
    std::size_t i = 0;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      ranges_[g].begin = i;
      while (i < features_.size() && static_cast<std::size_t>(features_[i].group) == g) ++i;
      ranges_[g].end = i;
    }
    if (i != features_.size()) throw SchemaError("features are not ordered by group");
    std::map<std::string, std::size_t, std::less<>> seen;
    for (std::size_t f = 0; f < features_.size(); ++f) {
      const auto& d = features_[f];
      if (!(d.lo <= d.hi)) throw SchemaError("feature '" + d.name + "' has lo > hi");
      if (!seen.emplace(d.name, f).second) throw SchemaError("duplicate feature name '" + d.name + "'");
      if ((d.kind == FeatureKind::simplex_component) != is_simplex_group(d.group)) {
        throw SchemaError("feature '" + d.name + "' kind does not match its group");
      }
    }
  }

  std::size_t size() const { return features_.size(); }
  const FeatureDescriptor& operator[](std::size_t i) const { return features_[i]; }
  const std::vector<FeatureDescriptor>& features() const { return features_; }
  IndexRange range(FeatureGroup g) const { return ranges_[static_cast<std::size_t>(g)]; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (features_[i].name == name) return i;
    }
    return std::nullopt;
  }

  bool operator==(const FeatureSchema& o) const { return features_ == o.features_; }

 private:
  std::vector<FeatureDescriptor> features_;
  std::array<IndexRange, kGroupCount> ranges_{};
};

using GroupWidths = std::map<std::string, std::size_t>;

/// Desk-scale widths: 64 features in total.
inline GroupWidths default_widths() {
  return {{"byte_histogram", 16}, {"byte_entropy", 16}, {"strings", 12},
          {"general", 4},         {"coff_header", 4},   {"sections", 4},
          {"imports", 4},         {"exports", 2},       {"data_directories", 2}};
}

namespace detail {

inline std::string feature_name(FeatureGroup g, std::size_t k) {
  // Stand-ins for the header fields the attack is allowed to touch.
  if (g == FeatureGroup::coff_header && k == 0) return "coff_header_timestamp";
  if (g == FeatureGroup::general && k == 0) return "general_clr_runtime_size";
  if (g == FeatureGroup::general && k == 1) return "general_clr_runtime_va";
  std::string base(to_string(g));
  if (g == FeatureGroup::strings) base += "_printable";
  char buf[24];
  std::snprintf(buf, sizeof buf, "_%02zu", k);
  return base + buf;
}

inline FeatureDescriptor make_descriptor(FeatureGroup g, std::size_t k) {
  FeatureDescriptor d;
  d.name = feature_name(g, k);
  d.group = g;
  if (is_simplex_group(g)) {
    d.kind = FeatureKind::simplex_component;
    d.lo = 0.0;
    d.hi = 1.0;
    return d;
  }
  // Non-simplex groups cycle through the scalar kinds.
  static constexpr std::array<FeatureKind, 3> cycle = {FeatureKind::continuous, FeatureKind::count,
                                                       FeatureKind::bounded_int};
  d.kind = cycle[(static_cast<std::size_t>(g) + k) % cycle.size()];
  switch (d.kind) {
    case FeatureKind::continuous: d.lo = 0.0; d.hi = 1.0; break;
    case FeatureKind::count: d.lo = 0.0; d.hi = 32.0; break;
    default: d.lo = 0.0; d.hi = 15.0; break;
  }
  return d;
}

}  // namespace detail

/// Builds a schema with the requested number of features per group. Groups
/// not mentioned get width zero; every mentioned width must be at least 1.
inline FeatureSchema make_schema(const GroupWidths& widths) {
  std::array<std::size_t, kGroupCount> w{};
  for (const auto& [name, width] : widths) {
    const auto g = group_from_string(name);
    if (!g) throw SchemaError("unknown feature group '" + name + "'");
    if (width < 1) throw SchemaError("group '" + name + "' must have width >= 1");
    w[static_cast<std::size_t>(*g)] = width;
  }
  std::vector<FeatureDescriptor> features;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    for (std::size_t k = 0; k < w[g]; ++k) {
      features.push_back(detail::make_descriptor(static_cast<FeatureGroup>(g), k));
    }
  }
  return FeatureSchema(std::move(features));
}

/// Schema restricted to the given (ascending) feature indices.
inline FeatureSchema project(const FeatureSchema& schema, std::span<const std::size_t> indices) {
  std::vector<FeatureDescriptor> features;
  features.reserve(indices.size());
  for (auto i : indices) {
    if (i >= schema.size()) throw ArgumentError("projection index out of range");
    features.push_back(schema[i]);
  }
  return FeatureSchema(std::move(features));
}

inline constexpr double kSimplexTolerance = 1e-9;

/// Returns an empty string when `x` satisfies every schema invariant,
/// otherwise a description of the first violation.
inline std::string check_vector(const FeatureSchema& schema, std::span<const double> x) {
  if (x.size() != schema.size()) return "length " + std::to_string(x.size()) + " != " + std::to_string(schema.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& d = schema[i];
    if (!std::isfinite(x[i])) return d.name + " is not finite";
    if (x[i] < d.lo || x[i] > d.hi) return d.name + " out of bounds";
    if (is_integral_kind(d.kind) && x[i] != std::round(x[i])) return d.name + " is not integral";
  }
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const auto group = static_cast<FeatureGroup>(g);
    const auto r = schema.range(group);
    if (!is_simplex_group(group) || r.empty()) continue;
    double sum = 0.0;
    for (auto i = r.begin; i < r.end; ++i) sum += x[i];
    if (std::abs(sum - 1.0) > kSimplexTolerance) return std::string(to_string(group)) + " does not sum to 1";
  }
  return {};
}

inline bool conforms(const FeatureSchema& schema, std::span<const double> x) {
  return check_vector(schema, x).empty();
}

/// Labeled samples. Label 1 is malicious, 0 benign.
struct Dataset {
  FeatureSchema schema;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<std::size_t> informative_indices;
  std::uint64_t seed = 0;

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return schema.size(); }
  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
  bool operator==(const Dataset&) const = default;
};

/// Knobs of the synthetic generator beyond the required arguments.
struct GeneratorOptions {
  /// Class-conditional mean gap of each informative latent, in within-class
  /// standard deviations.
  double separation = 2.0;
  /// Loading of a per-sample factor shared by all informative latents along
  /// the class direction. Makes samples hard to classify as a whole while
  /// keeping every feature's marginal separation unchanged.
  double shared_factor = 0.55;
};

namespace detail {

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

struct PlantedFeature {
  std::size_t index = 0;
  std::size_t partner = 0;  // simplex partner receiving the opposite tilt
  bool paired = false;
  double sign = 1.0;
};

/// Chooses the informative features. Simplex components are planted in
/// pairs within one group so that tilting mass between them leaves every
/// other component's distribution unchanged.
inline std::vector<PlantedFeature> plan_informative(const FeatureSchema& schema, std::size_t k,
                                                    std::uint64_t seed) {
  const auto n = schema.size();
  CounterRng rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  std::vector<bool> taken(n, false);
  std::vector<PlantedFeature> plan;
  std::size_t planted = 0;
  for (auto i : order) {
    if (planted == k) break;
    if (taken[i]) continue;
    const auto& d = schema[i];
    PlantedFeature p;
    p.index = i;
    p.sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    if (d.kind == FeatureKind::simplex_component) {
      if (k - planted < 2) continue;
      const auto r = schema.range(d.group);
      std::vector<std::size_t> free;
      for (auto j = r.begin; j < r.end; ++j) {
        if (j != i && !taken[j]) free.push_back(j);
      }
      if (free.empty()) continue;
      p.partner = free[rng.below(free.size())];
      p.paired = true;
      taken[p.partner] = true;
      planted += 2;
    } else {
      planted += 1;
    }
    taken[i] = true;
    plan.push_back(p);
  }
  if (planted != k) {
    throw ArgumentError("cannot plant " + std::to_string(k) + " informative features in this schema");
  }
  return plan;
}

inline double realize_scalar(const FeatureDescriptor& d, double t) {
  double v = 0.0;
  switch (d.kind) {
    case FeatureKind::continuous: v = 0.5 + 0.1 * t; break;
    case FeatureKind::count: v = std::round(16.0 + 3.0 * t); break;
    default: v = std::round(7.5 + 1.5 * t); break;
  }
  return std::clamp(v, d.lo, d.hi);
}

}  // namespace detail

/// Generates a labeled dataset with `n_informative` planted label-predictive
/// features. Deterministic in `seed`; sample i depends only on (seed, i).
inline Dataset generate(const FeatureSchema& schema, std::size_t n_samples, std::size_t n_informative,
                        double class_balance, std::uint64_t seed, const GeneratorOptions& opts = {}) {
  if (n_informative > schema.size()) throw ArgumentError("n_informative exceeds feature count");
  if (!(class_balance > 0.0 && class_balance < 1.0)) throw ArgumentError("class_balance must be in (0, 1)");
  if (!(opts.shared_factor >= 0.0 && opts.shared_factor < 1.0)) throw ArgumentError("shared_factor must be in [0, 1)");

  const auto plan = detail::plan_informative(schema, n_informative, seed);
  const auto F = schema.size();
  std::vector<int> role(F, -1);  // index into plan, or -1
  for (std::size_t p = 0; p < plan.size(); ++p) {
    role[plan[p].index] = static_cast<int>(p);
    if (plan[p].paired) role[plan[p].partner] = static_cast<int>(p);
  }

  Dataset ds;
  ds.schema = schema;
  ds.seed = seed;
  for (const auto& p : plan) {
    ds.informative_indices.push_back(p.index);
    if (p.paired) ds.informative_indices.push_back(p.partner);
  }
  std::sort(ds.informative_indices.begin(), ds.informative_indices.end());

  const double rho = opts.shared_factor;
  const double idio = std::sqrt(1.0 - rho * rho);
  const double half_gap = 0.5 * opts.separation;
  const auto sample_seed = derive_seed(seed, 2);

  ds.rows.resize(n_samples);
  ds.labels.resize(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    CounterRng rng(sample_seed, s);
    const int y = rng.uniform() < class_balance ? 1 : 0;
    const double shared = rng.normal();
    const double cls = y == 1 ? half_gap : -half_gap;

    // Latent per planted feature, drawn in plan order.
    std::vector<double> latent(plan.size());
    for (std::size_t p = 0; p < plan.size(); ++p) {
      latent[p] = plan[p].sign * (cls + rho * shared) + idio * rng.normal();
    }

    std::vector<double> x(F, 0.0);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const auto group = static_cast<FeatureGroup>(g);
      const auto r = schema.range(group);
      if (r.empty()) continue;
      if (is_simplex_group(group)) {
        double total = 0.0;
        for (auto i = r.begin; i < r.end; ++i) {
          x[i] = std::exp(0.2 * rng.normal());
          total += x[i];
        }
        for (auto i = r.begin; i < r.end; ++i) x[i] /= total;
        for (auto i = r.begin; i < r.end; ++i) {
          if (role[i] < 0) continue;
          const auto& p = plan[static_cast<std::size_t>(role[i])];
          if (p.index != i) continue;
          const double mass = x[p.index] + x[p.partner];
          const double share = detail::logistic(latent[static_cast<std::size_t>(role[i])]);
          x[p.index] = mass * share;
          x[p.partner] = mass - x[p.index];
        }
        // Exact renormalization so the group sums to one within rounding.
        double sum = 0.0;
        for (auto i = r.begin; i < r.end; ++i) sum += x[i];
        for (auto i = r.begin; i < r.end; ++i) x[i] /= sum;
      } else {
        for (auto i = r.begin; i < r.end; ++i) {
          const double t = role[i] >= 0 ? latent[static_cast<std::size_t>(role[i])] : rng.normal();
          x[i] = detail::realize_scalar(schema[i], t);
        }
      }
    }
    ds.rows[s] = std::move(x);
    ds.labels[s] = y;
  }
  return ds;
}

/// Subset of rows, in the given order.
inline Dataset select_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.schema = ds.schema;
  out.informative_indices = ds.informative_indices;
  out.seed = ds.seed;
  out.rows.reserve(rows.size());
  out.labels.reserve(rows.size());
  for (auto r : rows) {
    out.rows.push_back(ds.rows.at(r));
    out.labels.push_back(ds.labels.at(r));
  }
  return out;
}

/// Row indices of the train/test partition produced by `split`.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified partition: the train share of each label is allocated by
/// largest remainder so that the train size is round(fraction * n).
inline SplitIndices split_indices(const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("train_fraction must be in (0, 1)");
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i] == 1 ? 1 : 0].push_back(i);

  const auto total = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(labels.size())));
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double exact = train_fraction * static_cast<double>(by_label[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    assigned += quota[c];
  }
  while (assigned < total) {
    const int c = remainder[1] > remainder[0] ? 1 : 0;
    if (quota[c] < by_label[c].size()) {
      ++quota[c];
    } else {
      ++quota[1 - c];
    }
    remainder[c] = -1.0;
    ++assigned;
  }

  SplitIndices out;
  for (int c = 0; c < 2; ++c) {
    auto idx = by_label[c];
    CounterRng rng(derive_seed(seed, 3), static_cast<std::uint64_t>(c));
    rng.shuffle(idx.begin(), idx.end());
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  const auto idx = split_indices(ds.labels, train_fraction, seed);
  return {select_rows(ds, idx.train), select_rows(ds, idx.test)};
}

/// Bitset over the feature indices of a schema.
class FeatureMask {
 public:
  FeatureMask() = default;
  explicit FeatureMask(std::size_t n, bool value = false) : bits_(n, value) {}

  static FeatureMask all(std::size_t n) { return FeatureMask(n, true); }

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t i) const { return bits_.at(i); }
  void set(std::size_t i, bool v = true) { bits_.at(i) = v; }
  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
      if (bits_[i]) out.push_back(i);
    }
    return out;
  }

  FeatureMask operator&(const FeatureMask& o) const {
    if (o.size() != size()) throw ArgumentError("mask size mismatch");
    FeatureMask out(size());
    for (std::size_t i = 0; i < size(); ++i) out.bits_[i] = bits_[i] && o.bits_[i];
    return out;
  }

  bool operator==(const FeatureMask&) const = default;

 private:
  std::vector<bool> bits_;
};

/// Uniform subset of round(fraction * n) features, without replacement.
inline FeatureMask sample_feature_mask(std::size_t n_features, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("mask fraction must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_features)));
  std::vector<std::size_t> order(n_features);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(derive_seed(seed, 4));
  rng.shuffle(order.begin(), order.end());
  FeatureMask mask(n_features);
  for (std::size_t i = 0; i < k; ++i) mask.set(order[i]);
  return mask;
}

inline FeatureMask sample_feature_mask(const FeatureSchema& schema, double fraction, std::uint64_t seed) {
  return sample_feature_mask(schema.size(), fraction, seed);
}

/// Dataset restricted to the given feature columns.
inline Dataset project_features(const Dataset& ds, std::span<const std::size_t> features) {
  Dataset out;
  out.schema = project(ds.schema, features);
  out.labels = ds.labels;
  out.seed = ds.seed;
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (std::binary_search(ds.informative_indices.begin(), ds.informative_indices.end(), features[k])) {
      out.informative_indices.push_back(k);
    }
  }
  out.rows.reserve(ds.rows.size());
  for (const auto& row : ds.rows) {
    std::vector<double> r(features.size());
    for (std::size_t k = 0; k < features.size(); ++k) r[k] = row[features[k]];
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline std::vector<double> gather(std::span<const double> x, std::span<const std::size_t> features) {
  std::vector<double> out(features.size());
  for (std::size_t k = 0; k < features.size(); ++k) out[k] = x[features[k]];
  return out;
}

// ---------------------------------------------------------------------------
// File formats
//
// Dataset (text):
//   XEAD1 <F> <n_samples>
//   {"features":[{"name":..,"group":..,"kind":..,"lo":..,"hi":..},...]}
//   {"seed":..,"informative_indices":[...]}
//   <label>,<v_0>,...,<v_{F-1}>          one line per sample, %.17g values
//
// Mask (text):
//   XEAM1 <F>
//   <hex digits>   digit k holds features 4k..4k+3, least significant bit first
// ---------------------------------------------------------------------------

inline nlohmann::json schema_to_json(const FeatureSchema& schema) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& d : schema.features()) {
    features.push_back({{"name", d.name},
                        {"group", std::string(to_string(d.group))},
                        {"kind", std::string(to_string(d.kind))},
                        {"lo", d.lo},
                        {"hi", d.hi}});
  }
  return {{"features", features}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureDescriptor> features;
    for (const auto& f : j.at("features")) {
      FeatureDescriptor d;
      d.name = f.at("name").get<std::string>();
      const auto g = group_from_string(f.at("group").get<std::string>());
      const auto k = kind_from_string(f.at("kind").get<std::string>());
      if (!g || !k) throw FormatError("unknown group or kind for feature '" + d.name + "'");
      d.group = *g;
      d.kind = *k;
      d.lo = f.at("lo").get<double>();
      d.hi = f.at("hi").get<double>();
      features.push_back(std::move(d));
    }
    return FeatureSchema(std::move(features));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid schema JSON: ") + e.what());
  } catch (const SchemaError& e) {
    throw FormatError(std::string("invalid schema: ") + e.what());
  }
}

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw FormatError(what + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  out << "XEAD1 " << ds.dim() << ' ' << ds.size() << '\n';
  out << schema_to_json(ds.schema).dump() << '\n';
  nlohmann::json meta = {{"seed", ds.seed}, {"informative_indices", ds.informative_indices}};
  out << meta.dump() << '\n';
  std::string line;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    line.clear();
    line += ds.labels[s] == 1 ? '1' : '0';
    for (double v : ds.rows[s]) {
      line += ',';
      detail::append_double(line, v);
    }
    line += '\n';
    out << line;
  }
}

inline Dataset read_dataset(std::istream& in) {
  const std::string what = "dataset";
  std::istringstream header(detail::read_line(in, what));
  std::string magic;
  std::size_t F = 0, n = 0;
  if (!(header >> magic >> F >> n) || magic != "XEAD1") throw FormatError("dataset: bad magic header");

  Dataset ds;
  try {
    ds.schema = schema_from_json(nlohmann::json::parse(detail::read_line(in, what)));
    const auto meta = nlohmann::json::parse(detail::read_line(in, what));
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.informative_indices = meta.at("informative_indices").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: invalid JSON header: ") + e.what());
  }
  if (ds.schema.size() != F) throw FormatError("dataset: schema size does not match header");
  for (auto i : ds.informative_indices) {
    if (i >= F) throw FormatError("dataset: informative index out of range");
  }

  ds.rows.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto line = detail::read_line(in, what);
    std::vector<double> row;
    row.reserve(F);
    std::size_t pos = line.find(',');
    const auto label = std::string_view(line).substr(0, pos);
    if (label != "0" && label != "1") throw FormatError("dataset: bad label on row " + std::to_string(s));
    while (pos != std::string::npos) {
      const auto next = line.find(',', pos + 1);
      const auto field = std::string_view(line).substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
      row.push_back(detail::parse_double(field, what));
      pos = next;
    }
    if (row.size() != F) {
      throw FormatError("dataset: row " + std::to_string(s) + " has " + std::to_string(row.size()) +
                        " values, expected " + std::to_string(F));
    }
    ds.labels.push_back(label == "1" ? 1 : 0);
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_dataset(in);
}

inline void write_mask(std::ostream& out, const FeatureMask& mask) {
  static constexpr char digits[] = "0123456789abcdef";
  out << "XEAM1 " << mask.size() << '\n';
  for (std::size_t k = 0; k * 4 < mask.size(); ++k) {
    unsigned v = 0;
    for (std::size_t b = 0; b < 4 && k * 4 + b < mask.size(); ++b) {
      if (mask.test(k * 4 + b)) v |= 1u << b;
    }
    out << digits[v];
  }
  out << '\n';
}

inline FeatureMask read_mask(std::istream& in) {
  std::istringstream header(detail::read_line(in, "mask"));
  std::string magic;
  std::size_t F = 0;
  if (!(header >> magic >> F) || magic != "XEAM1") throw FormatError("mask: bad magic header");
  const auto hex = detail::read_line(in, "mask");
  if (hex.size() != (F + 3) / 4) throw FormatError("mask: bitset length does not match feature count");
  FeatureMask mask(F);
  for (std::size_t k = 0; k < hex.size(); ++k) {
    const char c = hex[k];
    unsigned v = 0;
    if (c >= '0' && c <= '9') v = static_cast<unsigned>(c - '0');
    else if (c >= 'a' && c <= 'f') v = static_cast<unsigned>(c - 'a' + 10);
    else throw FormatError("mask: bad hex digit");
    for (std::size_t b = 0; b < 4; ++b) {
      const bool bit = (v >> b) & 1u;
      if (k * 4 + b < F) mask.set(k * 4 + b, bit);
      else if (bit) throw FormatError("mask: bit set beyond feature count");
    }
  }
  return mask;
}

inline void save_mask(const FeatureMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_mask(out, mask);
}

inline FeatureMask load_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_mask(in);
}

}  // namespace xea
