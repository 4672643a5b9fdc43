#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>

namespace xea {

/// Black-box access to a classifier: a malicious-class score in (0, 1) per
/// query and nothing else. Every call is counted; the counter is atomic so
/// concurrent callers are accounted exactly.
class ScoreOracle {
 public:
  using ScoreFn = std::function<double(std::span<const double>)>;

  explicit ScoreOracle(ScoreFn fn) : fn_(std::move(fn)) {}

  ScoreOracle(const ScoreOracle&) = delete;
  ScoreOracle& operator=(const ScoreOracle&) = delete;

  double score(std::span<const double> x) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return fn_(x);
  }

  double operator()(std::span<const double> x) const { return score(x); }

  std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }

 private:
  ScoreFn fn_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

}  // namespace xea
