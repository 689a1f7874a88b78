#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "longclip/errors.hpp"

namespace longclip {

// Unit-L2-norm vector in the shared image/text space.
class EmbeddingVector {
 public:
  static constexpr double kNormTolerance = 1e-6;

  EmbeddingVector() = default;

  // Takes a vector that is already unit-norm; throws UsageError otherwise.
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    const double n = norm();
    if (!(std::abs(n - 1.0) <= kNormTolerance)) {
      throw UsageError("embedding is not unit-norm (norm " + std::to_string(n) + ")");
    }
  }

  static EmbeddingVector normalized(std::vector<double> values) {
    double ss = 0;
    for (double v : values) ss += v * v;
    const double n = std::sqrt(ss);
    if (!(n > 0) || !std::isfinite(n)) throw NumericError("cannot normalize a zero or non-finite vector");
    for (double& v : values) v /= n;
    return EmbeddingVector(std::move(values));
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double ss = 0;
    for (double v : values_) ss += v * v;
    return std::sqrt(ss);
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

// Inner product accumulated in index order.
inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace longclip
