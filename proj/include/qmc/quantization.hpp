#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qmc {

// A quantizer over the real line described by strictly increasing boundaries
// b_0 < b_1 < ... < b_L with b_0 = -inf and b_L = +inf. Level l in {1..L}
// owns the right-closed bin (b_{l-1}, b_l]. Immutable after construction.
class QuantizationScheme {
 public:
  explicit QuantizationScheme(std::vector<double> boundaries)
      : boundaries_(std::move(boundaries)) {
    if (boundaries_.size() < 2)
      throw std::invalid_argument("QuantizationScheme: need at least 1 level");
    if (!std::isinf(boundaries_.front()) || boundaries_.front() > 0)
      throw std::invalid_argument("QuantizationScheme: first boundary must be -inf");
    if (!std::isinf(boundaries_.back()) || boundaries_.back() < 0)
      throw std::invalid_argument("QuantizationScheme: last boundary must be +inf");
    for (std::size_t i = 1; i < boundaries_.size(); ++i) {
      if (!(boundaries_[i - 1] < boundaries_[i]))
        throw std::invalid_argument("QuantizationScheme: boundaries must be strictly increasing");
      if (i + 1 < boundaries_.size() && !std::isfinite(boundaries_[i]))
        throw std::invalid_argument("QuantizationScheme: interior boundaries must be finite");
    }
  }

  // Levels 1..L at the integers, interior boundaries at the half-integers:
  // (-inf, 1.5, 2.5, ..., L-0.5, +inf).
  static QuantizationScheme uniform(int num_levels) {
    if (num_levels < 2)
      throw std::invalid_argument("QuantizationScheme::uniform: num_levels must be >= 2, got " +
                                  std::to_string(num_levels));
    std::vector<double> b;
    b.reserve(static_cast<std::size_t>(num_levels) + 1);
    b.push_back(-std::numeric_limits<double>::infinity());
    for (int l = 1; l < num_levels; ++l) b.push_back(l + 0.5);
    b.push_back(std::numeric_limits<double>::infinity());
    return QuantizationScheme(std::move(b));
  }

  int num_levels() const { return static_cast<int>(boundaries_.size()) - 1; }

  const std::vector<double>& boundaries() const { return boundaries_; }

  // The unique level l with b_{l-1} < x <= b_l.
  int quantize(double x) const {
    if (!std::isfinite(x))
      throw std::invalid_argument("QuantizationScheme::quantize: x must be finite");
    const auto it = std::lower_bound(boundaries_.begin() + 1, boundaries_.end(), x);
    return static_cast<int>(it - boundaries_.begin());
  }

  // (L, U) = (b_{level-1}, b_level); L may be -inf, U may be +inf.
  std::pair<double, double> bounds(int level) const {
    if (level < 1 || level > num_levels())
      throw std::out_of_range("QuantizationScheme::bounds: level " + std::to_string(level) +
                              " outside 1.." + std::to_string(num_levels()));
    return {boundaries_[static_cast<std::size_t>(level) - 1],
            boundaries_[static_cast<std::size_t>(level)]};
  }

  friend bool operator==(const QuantizationScheme& a, const QuantizationScheme& b) {
    return a.boundaries_ == b.boundaries_;
  }

 private:
  std::vector<double> boundaries_;
};

}  // namespace qmc
