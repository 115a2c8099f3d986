#pragma once

#include <cstdint>
#include <vector>

#include "mfgn/distribution.hpp"

namespace mfgn {

// Hard sum-constraint factor: the values of the connected edge variables
// must add up to the atom's valence.
struct ValenceFactorSpec {
  int valence_target = 0;       // v
  int neighbor_domain_size = 2; // b + 1 bond states (0..b)
  int neighbor_count = 1;       // t incident edge variables

  int max_state() const { return neighbor_domain_size - 1; }
  void validate() const;
};

// Sum over all assignments of the given variables with total v of the
// product of their message values. Computed by the convolution recurrence
// with per-row renormalization; the accumulated scale is folded back in so
// the returned value is the exact (unnormalized) sum.
double dp_partial(const std::vector<DiscreteDistribution>& messages, int v);

// Renormalized prefix/suffix convolution tables over message sums 0..v.
// prefix[m] covers messages 0..m-1, suffix[m] covers messages m..t-1;
// prefix[0] and suffix[t] are the delta at sum 0. Each nonzero row sums
// to 1; rows that collapse to zero stay zero.
struct DpTable {
  std::vector<std::vector<double>> prefix; // t+1 rows, width v+1
  std::vector<std::vector<double>> suffix; // t+1 rows, width v+1
};

DpTable build_dp_table(const ValenceFactorSpec& spec,
                       const std::vector<DiscreteDistribution>& incoming);

struct ValenceMessages {
  std::vector<DiscreteDistribution> messages;
  std::vector<std::uint8_t> unsatisfiable; // per neighbor, uniform fallback applied

  bool any_unsatisfiable() const;
};

// Factor-to-variable messages for all t neighbors in one prefix/suffix pass,
// O(t * b * v) total. Neighbors whose exclusion convolution is identically
// zero over the reachable range get the uniform distribution and a flag.
ValenceMessages valence_messages(const ValenceFactorSpec& spec,
                                 const std::vector<DiscreteDistribution>& incoming);

// Exact enumeration over all (b+1)^t assignments. Reference oracle for
// tests; capped at 10^6 configurations.
ValenceMessages brute_force_valence_messages(const ValenceFactorSpec& spec,
                                             const std::vector<DiscreteDistribution>& incoming);

// Forward pass that keeps unnormalized prefix/suffix tables so the exact
// vector-Jacobian product can be evaluated. Used where valence messages sit
// inside a trained network. Intended for desk-scale arity; the unnormalized
// tables underflow for very long products.
class ValenceTape {
 public:
  ValenceTape(const ValenceFactorSpec& spec, const std::vector<DiscreteDistribution>& incoming);

  const ValenceMessages& outputs() const { return outputs_; }

  // d_outputs[i][x] = dL/d outputs.messages[i][x]; returns dL/d incoming[j][y].
  std::vector<std::vector<double>> backward(const std::vector<std::vector<double>>& d_outputs) const;

 private:
  ValenceFactorSpec spec_;
  std::vector<std::vector<double>> prefix_; // unnormalized
  std::vector<std::vector<double>> suffix_; // unnormalized
  std::vector<std::vector<double>> raw_;    // pre-normalization outputs
  std::vector<double> raw_sum_;
  std::vector<std::vector<double>> incoming_;
  ValenceMessages outputs_;
};

}  // namespace mfgn
