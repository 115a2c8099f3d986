#include "mfgn/distribution.hpp"

#include <algorithm>
#include <cmath>

#include "mfgn/error.hpp"

namespace mfgn {

DiscreteDistribution DiscreteDistribution::uniform(int size) {
  if (size < 1) throw ArgumentError("uniform distribution needs size >= 1");
  return DiscreteDistribution(std::vector<double>(static_cast<std::size_t>(size), 1.0 / size));
}

DiscreteDistribution DiscreteDistribution::one_hot(int size, int state) {
  if (state < 0 || state >= size) throw ArgumentError("one_hot state out of range");
  DiscreteDistribution d(std::vector<double>(static_cast<std::size_t>(size), 0.0));
  d[state] = 1.0;
  return d;
}

double DiscreteDistribution::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

bool DiscreteDistribution::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

bool DiscreteDistribution::all_nonnegative() const {
  for (double v : values)
    if (v < 0.0) return false;
  return true;
}

void DiscreteDistribution::normalize() {
  if (values.empty()) throw ArgumentError("cannot normalize an empty distribution");
  if (!all_finite()) throw ArgumentError("cannot normalize non-finite entries");
  if (!all_nonnegative()) throw ArgumentError("cannot normalize negative entries");
  const double s = sum();
  if (s <= 0.0) throw DegenerateMessageError("all-zero distribution");
  for (double& v : values) v /= s;
}

DiscreteDistribution DiscreteDistribution::normalized() const {
  DiscreteDistribution d = *this;
  d.normalize();
  return d;
}

int DiscreteDistribution::argmax() const {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double DiscreteDistribution::max_abs_diff(const DiscreteDistribution& other) const {
  double m = 0.0;
  const std::size_t n = std::min(values.size(), other.values.size());
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(values[i] - other.values[i]));
  if (values.size() != other.values.size()) return 1.0;
  return m;
}

}  // namespace mfgn
