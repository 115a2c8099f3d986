#pragma once

#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mfgn/distribution.hpp"
#include "mfgn/lowrank.hpp"
#include "mfgn/valence.hpp"

namespace mfgn {

enum class VarKind { Atom, Edge, MassPeak };
enum class FactorKind { TypeA, TypeB, TypeC, DenseTable };

struct VariableNode {
  int id = -1;
  int domain_size = 1;
  VarKind kind = VarKind::Atom;
  DiscreteDistribution unary_potential; // f_i; defaults to uniform
};

// Explicit potential table, row-major over the neighbors' joint states with
// the last neighbor varying fastest.
struct DenseTablePayload {
  std::vector<double> table;
};

struct ValencePayload {
  ValenceFactorSpec spec;
};

struct LowRankPayload {
  std::shared_ptr<const LowRankFactorParams> params; // inline weights for direct inference
  std::string param_key;                             // sharing-group id in a learned store
};

using FactorPayload = std::variant<std::monostate, DenseTablePayload, ValencePayload, LowRankPayload>;

struct FactorNode {
  int id = -1;
  std::vector<int> neighbors; // variable ids, ordered
  FactorKind kind = FactorKind::DenseTable;
  FactorPayload payload;
};

// Bipartite variable/factor structure. Immutable once built; inference runs
// share it read-only and keep their own message stores.
class FactorGraph {
 public:
  int add_variable(int domain_size, VarKind kind = VarKind::Atom);
  int add_variable(int domain_size, VarKind kind, DiscreteDistribution unary);
  int add_factor(std::vector<int> neighbors, FactorKind kind, FactorPayload payload);

  int num_variables() const { return static_cast<int>(variables_.size()); }
  int num_factors() const { return static_cast<int>(factors_.size()); }
  const VariableNode& variable(int i) const { return variables_.at(static_cast<std::size_t>(i)); }
  VariableNode& variable(int i) { return variables_.at(static_cast<std::size_t>(i)); }
  const FactorNode& factor(int a) const { return factors_.at(static_cast<std::size_t>(a)); }
  const std::vector<VariableNode>& variables() const { return variables_; }
  const std::vector<FactorNode>& factors() const { return factors_; }

  // (factor id, slot index) pairs per variable, in factor insertion order.
  const std::vector<std::pair<int, int>>& factors_of(int var) const {
    return var_adjacency_.at(static_cast<std::size_t>(var));
  }

  // Slot of variable i in factor a; AdjacencyError if not a neighbor.
  int slot_of(int factor_id, int var_id) const;

  // Checks structural invariants: consistent adjacency, valid ids, nonempty
  // duplicate-free neighbor lists, payloads matching factor kinds and sizes.
  void validate() const;

  // Joint configuration count of a factor's neighborhood (as double, to
  // compare against caps without overflow).
  double joint_configurations(int factor_id) const;

 private:
  std::vector<VariableNode> variables_;
  std::vector<FactorNode> factors_;
  std::vector<std::vector<std::pair<int, int>>> var_adjacency_;
};

enum class CombinationMode { Multiply, SumMlp };

// Schedule knobs for synchronous loopy BP. The combination modes are carried
// for the neuralized executor; the classic sum-product engine always
// multiplies (Multiply is the exact algebra).
struct BPSchedule {
  int max_iterations = 10;
  double damping = 0.0;        // new = (1-d)*new + d*old
  double convergence_tol = 1e-9;
  CombinationMode atom_combination = CombinationMode::SumMlp;
  CombinationMode edge_combination = CombinationMode::Multiply;
  CombinationMode peak_combination = CombinationMode::SumMlp;

  void validate() const;
};

// Directed messages of one inference run, indexed [factor][slot].
struct MessageStore {
  std::vector<std::vector<DiscreteDistribution>> factor_to_var;
  std::vector<std::vector<DiscreteDistribution>> var_to_factor;
  int degenerate_fallbacks = 0;

  static MessageStore uniform_init(const FactorGraph& g);
};

}  // namespace mfgn
