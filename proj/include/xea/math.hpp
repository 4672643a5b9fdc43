#pragma once

#include <cmath>

namespace xea {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(m)) without overflow.
inline double softplus(double m) {
  return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

/// Binary cross-entropy of a logit against a 0/1 label.
inline double logit_loss(double z, int label) { return softplus(label == 1 ? -z : z); }

}  // namespace xea
