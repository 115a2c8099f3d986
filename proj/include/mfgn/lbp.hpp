#pragma once

#include <vector>

#include "mfgn/factor_graph.hpp"

namespace mfgn {

// m_{i->a}: componentwise product of the unary potential with the incoming
// factor messages from N(i)\{a}, normalized. Products over more than a few
// terms accumulate in log space. Throws AdjacencyError when (i, a) are not
// adjacent and DegenerateMessageError on an all-zero product (the engine
// falls back to uniform and counts the event).
DiscreteDistribution variable_to_factor_message(const FactorGraph& graph, const MessageStore& state,
                                                int var_id, int factor_id);

// m_{a->i} for an explicit-table factor: exact marginalization over every
// joint configuration of the other neighbors, normalized. CapacityError when
// the configuration count exceeds the cap.
DiscreteDistribution dense_factor_to_variable_message(const FactorGraph& graph, const MessageStore& state,
                                                      int factor_id, int var_id,
                                                      double config_cap = 1e6);

// All outgoing messages of one factor, dispatched on its kind. Low-rank
// factors need inline params; TypeA runs the valence DP over all slots at
// once. Returned messages are normalized; degenerate or unsatisfiable slots
// come back uniform with the count reported through `fallbacks`.
std::vector<DiscreteDistribution> factor_messages(const FactorGraph& graph, const MessageStore& state,
                                                  int factor_id, int* fallbacks = nullptr);

struct BeliefSet {
  std::vector<DiscreteDistribution> beliefs;
  int iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
  int degenerate_fallbacks = 0;
};

// Synchronous loopy BP: per round, recompute all factor->variable messages
// from the previous round's store, then all variable->factor messages from
// the fresh factor messages; damp both against the previous values. Stops
// when the largest message change falls below convergence_tol or after
// max_iterations rounds. Beliefs are normalize(f_i * prod m_{a->i}).
BeliefSet run_lbp(const FactorGraph& graph, const BPSchedule& schedule);

// Beliefs for a given message state (exposed for schedule experiments).
std::vector<DiscreteDistribution> beliefs_from(const FactorGraph& graph, const MessageStore& state,
                                               int* fallbacks = nullptr);

}  // namespace mfgn
