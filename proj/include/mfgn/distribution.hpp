#pragma once

#include <vector>

namespace mfgn {

// Normalized nonnegative vector over a variable's finite domain. Messages
// and beliefs are all carried in this form.
struct DiscreteDistribution {
  std::vector<double> values;

  DiscreteDistribution() = default;
  explicit DiscreteDistribution(std::vector<double> v) : values(std::move(v)) {}

  static DiscreteDistribution uniform(int size);
  static DiscreteDistribution one_hot(int size, int state);

  int size() const { return static_cast<int>(values.size()); }
  double operator[](int i) const { return values[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return values[static_cast<std::size_t>(i)]; }

  double sum() const;
  bool all_finite() const;
  bool all_nonnegative() const;

  // Scales entries to sum to 1. Throws DegenerateMessageError on an all-zero
  // vector and ArgumentError on negative or non-finite entries.
  void normalize();
  DiscreteDistribution normalized() const;

  int argmax() const;
  double max_abs_diff(const DiscreteDistribution& other) const;
};

}  // namespace mfgn
