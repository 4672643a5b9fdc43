#pragma once

// Rank agreement between two score vectors: Kendall tau-b and a weighted
// tau with additive hyperbolic pair weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/explain.hpp"
#include "xea/random.hpp"

namespace xea {

/// P concordant, Q discordant, T tied only in r1, U tied only in r2,
/// joint tied in both. They always add up to F(F-1)/2.
struct PairCounts {
  std::uint64_t concordant = 0;
  std::uint64_t discordant = 0;
  std::uint64_t ties_first = 0;
  std::uint64_t ties_second = 0;
  std::uint64_t joint_ties = 0;

  std::uint64_t total() const { return concordant + discordant + ties_first + ties_second + joint_ties; }
  bool operator==(const PairCounts&) const = default;
};

struct RankAgreement {
  double tau = 0.0;
  double tau_w = 0.0;
  PairCounts pairs;
};

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ArgumentError("score vectors differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw ArgumentError("rank agreement needs at least 2 features");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw ArgumentError("non-finite score");
  }
}

inline int sgn(double d) { return (d > 0.0) - (d < 0.0); }

// Counts strict inversions while merge-sorting v.
inline std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& tmp, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = merge_count(v, tmp, lo, mid) + merge_count(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[i] <= v[j]) {
      tmp[k++] = v[i++];
    } else {
      inv += mid - i;
      tmp[k++] = v[j++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

template <class It, class Eq>
std::uint64_t tied_pairs(It first, It last, Eq eq) {
  std::uint64_t total = 0;
  while (first != last) {
    auto run = first;
    std::uint64_t len = 0;
    while (run != last && eq(*first, *run)) {
      ++run;
      ++len;
    }
    total += len * (len - 1) / 2;
    first = run;
  }
  return total;
}

}  // namespace detail

/// Plain O(F^2) enumeration of every pair.
inline PairCounts count_pairs_reference(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b);
  PairCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const int s = detail::sgn(a[i] - a[j]);
      const int t = detail::sgn(b[i] - b[j]);
      if (s == 0 && t == 0) ++c.joint_ties;
      else if (s == 0) ++c.ties_first;
      else if (t == 0) ++c.ties_second;
      else if (s == t) ++c.concordant;
      else ++c.discordant;
    }
  }
  return c;
}

/// Knight's O(F log F) counting.
inline PairCounts count_pairs(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b);
  const std::size_t n = a.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return a[i] != a[j] ? a[i] < a[j] : b[i] < b[j];
  });
  const std::uint64_t n_a = detail::tied_pairs(idx.begin(), idx.end(), [&](auto i, auto j) { return a[i] == a[j]; });
  const std::uint64_t n_ab = detail::tied_pairs(idx.begin(), idx.end(),
                                                [&](auto i, auto j) { return a[i] == a[j] && b[i] == b[j]; });
  std::vector<double> v(n), tmp(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = b[idx[k]];
  const std::uint64_t swaps = detail::merge_count(v, tmp, 0, n);
  // v is now sorted
  const std::uint64_t n_b = detail::tied_pairs(v.begin(), v.end(), [](double x, double y) { return x == y; });

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  PairCounts c;
  c.joint_ties = n_ab;
  c.ties_first = n_a - n_ab;
  c.ties_second = n_b - n_ab;
  c.discordant = swaps;
  c.concordant = n0 - n_a - n_b + n_ab - swaps;
  return c;
}

/// (P - Q) / sqrt((P + Q + T)(P + Q + U)); 0 when either side is all ties.
inline double tau_from_counts(const PairCounts& c) {
  const double p = static_cast<double>(c.concordant);
  const double q = static_cast<double>(c.discordant);
  const double d = (p + q + static_cast<double>(c.ties_first)) * (p + q + static_cast<double>(c.ties_second));
  if (d <= 0.0) return 0.0;
  return (p - q) / std::sqrt(d);
}

inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  return tau_from_counts(count_pairs(a, b));
}

inline double kendall_tau_reference(std::span<const double> a, std::span<const double> b) {
  return tau_from_counts(count_pairs_reference(a, b));
}

/// Zero-based position of every element when sorted by descending score,
/// ties by ascending index.
inline std::vector<std::size_t> descending_ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

/// Tau-b with every pair weighted 1/(rank_i + 1) + 1/(rank_j + 1), ranks from `a`.
inline double weighted_kendall_tau(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b);
  const auto rank = descending_ranks(a);
  std::vector<double> w(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) w[i] = 1.0 / static_cast<double>(rank[i] + 1);
  double p = 0.0, q = 0.0, t = 0.0, u = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double wij = w[i] + w[j];
      const int s = detail::sgn(a[i] - a[j]);
      const int r = detail::sgn(b[i] - b[j]);
      if (s == 0 && r == 0) continue;
      if (s == 0) t += wij;
      else if (r == 0) u += wij;
      else if (s == r) p += wij;
      else q += wij;
    }
  }
  const double d = (p + q + t) * (p + q + u);
  if (d <= 0.0) return 0.0;
  return std::clamp((p - q) / std::sqrt(d), -1.0, 1.0);
}

inline RankAgreement rank_agreement(std::span<const double> a, std::span<const double> b) {
  RankAgreement r;
  r.pairs = count_pairs(a, b);
  r.tau = tau_from_counts(r.pairs);
  r.tau_w = weighted_kendall_tau(a, b);
  return r;
}

struct AgreementSummary {
  std::vector<RankAgreement> per_sample;
  double mean_tau = 0.0;
  double std_tau = 0.0;
  double mean_tau_w = 0.0;
  double std_tau_w = 0.0;

  std::size_t n_samples() const { return per_sample.size(); }
};

namespace detail {

// Sample standard deviation (n - 1); 0 for fewer than two values.
inline std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline std::vector<double> restricted_magnitude(std::span<const double> values, std::span<const std::size_t> keep) {
  std::vector<double> out;
  out.reserve(keep.size());
  for (auto i : keep) {
    if (i >= values.size()) throw ArgumentError("shared mask is wider than the attribution");
    out.push_back(std::abs(values[i]));
  }
  return out;
}

}  // namespace detail

inline AgreementSummary summarize(std::vector<RankAgreement> per_sample) {
  AgreementSummary s;
  s.per_sample = std::move(per_sample);
  std::vector<double> t, tw;
  for (const auto& r : s.per_sample) {
    t.push_back(r.tau);
    tw.push_back(r.tau_w);
  }
  std::tie(s.mean_tau, s.std_tau) = detail::mean_std(t);
  std::tie(s.mean_tau_w, s.std_tau_w) = detail::mean_std(tw);
  return s;
}

/// Per-sample agreement of |R| restricted to the shared features. Both
/// attribution lists are indexed in the same (full) feature space. The
/// weighted tau takes its ranks from `a`.
inline AgreementSummary compare_models(std::span<const Attribution> a, std::span<const Attribution> b,
                                       const FeatureMask& shared) {
  if (a.size() != b.size()) {
    throw ArgumentError("sample counts differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  const auto keep = shared.indices();
  if (keep.size() < 2) throw ArgumentError("shared mask must keep at least 2 features");
  std::vector<RankAgreement> out;
  out.reserve(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    const auto ra = detail::restricted_magnitude(a[s].values, keep);
    const auto rb = detail::restricted_magnitude(b[s].values, keep);
    out.push_back(rank_agreement(ra, rb));
  }
  return summarize(std::move(out));
}

/// One comparison of mean |R| per feature across all samples.
inline RankAgreement compare_models_global(std::span<const Attribution> a, std::span<const Attribution> b,
                                           const FeatureMask& shared) {
  if (a.size() != b.size()) throw ArgumentError("sample counts differ");
  const auto keep = shared.indices();
  if (keep.size() < 2) throw ArgumentError("shared mask must keep at least 2 features");
  const auto ma = detail::restricted_magnitude(mean_magnitude(a), keep);
  const auto mb = detail::restricted_magnitude(mean_magnitude(b), keep);
  return rank_agreement(ma, mb);
}

/// Uniform random scores standing in for an uninformed ranking.
inline std::vector<Attribution> random_attributions(std::size_t n_samples, std::size_t n_features,
                                                    std::uint64_t seed) {
  std::vector<Attribution> out(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    CounterRng rng(derive_seed(seed, 50), s);
    out[s].values.resize(n_features);
    for (auto& v : out[s].values) v = rng.uniform();
    out[s].completeness_gap = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

/// |top-k(a) ∩ top-k(b)| / k for two rankings (permutations of [0, F)).
inline double topk_overlap(std::span<const std::size_t> a, std::span<const std::size_t> b, std::size_t k) {
  if (a.size() != b.size()) throw ArgumentError("rankings differ in length");
  if (k < 1 || k > a.size()) {
    throw ArgumentError("k = " + std::to_string(k) + " out of range [1, " + std::to_string(a.size()) + "]");
  }
  std::vector<char> in_a(a.size(), 0);
  for (std::size_t r = 0; r < k; ++r) {
    if (a[r] >= a.size()) throw ArgumentError("ranking entry out of range");
    in_a[a[r]] = 1;
  }
  std::size_t hit = 0;
  for (std::size_t r = 0; r < k; ++r) {
    if (b[r] >= b.size()) throw ArgumentError("ranking entry out of range");
    hit += in_a[b[r]];
  }
  return static_cast<double>(hit) / static_cast<double>(k);
}

}  // namespace xea
