#include "mfgn/factor_graph.hpp"

#include <algorithm>
#include <set>

#include "mfgn/error.hpp"

namespace mfgn {

int FactorGraph::add_variable(int domain_size, VarKind kind) {
  return add_variable(domain_size, kind, DiscreteDistribution::uniform(domain_size));
}

int FactorGraph::add_variable(int domain_size, VarKind kind, DiscreteDistribution unary) {
  if (domain_size < 1) throw ArgumentError("variable domain size must be >= 1");
  if (unary.size() != domain_size) throw ArgumentError("unary potential length must equal domain size");
  if (!unary.all_finite() || !unary.all_nonnegative() || unary.sum() <= 0.0)
    throw ArgumentError("unary potential must be nonnegative with positive sum");
  VariableNode v;
  v.id = static_cast<int>(variables_.size());
  v.domain_size = domain_size;
  v.kind = kind;
  v.unary_potential = std::move(unary);
  variables_.push_back(std::move(v));
  var_adjacency_.emplace_back();
  return variables_.back().id;
}

int FactorGraph::add_factor(std::vector<int> neighbors, FactorKind kind, FactorPayload payload) {
  if (neighbors.empty()) throw ArgumentError("factor needs at least one neighbor");
  std::set<int> seen;
  for (int v : neighbors) {
    if (v < 0 || v >= num_variables()) throw ArgumentError("factor neighbor id out of range");
    if (!seen.insert(v).second) throw ArgumentError("factor neighbor list has duplicate variable ids");
  }
  FactorNode f;
  f.id = static_cast<int>(factors_.size());
  f.neighbors = std::move(neighbors);
  f.kind = kind;
  f.payload = std::move(payload);
  for (std::size_t s = 0; s < f.neighbors.size(); ++s)
    var_adjacency_[static_cast<std::size_t>(f.neighbors[s])].emplace_back(f.id, static_cast<int>(s));
  factors_.push_back(std::move(f));
  return factors_.back().id;
}

int FactorGraph::slot_of(int factor_id, int var_id) const {
  const FactorNode& f = factor(factor_id);
  for (std::size_t s = 0; s < f.neighbors.size(); ++s)
    if (f.neighbors[s] == var_id) return static_cast<int>(s);
  throw AdjacencyError("variable " + std::to_string(var_id) + " is not adjacent to factor " +
                       std::to_string(factor_id));
}

double FactorGraph::joint_configurations(int factor_id) const {
  const FactorNode& f = factor(factor_id);
  double n = 1.0;
  for (int v : f.neighbors) n *= variable(v).domain_size;
  return n;
}

void FactorGraph::validate() const {
  for (const auto& v : variables_) {
    if (v.domain_size < 1) throw ArgumentError("variable domain size must be >= 1");
    if (v.unary_potential.size() != v.domain_size)
      throw ArgumentError("unary potential length mismatch for variable " + std::to_string(v.id));
    if (!v.unary_potential.all_nonnegative() || v.unary_potential.sum() <= 0.0)
      throw ArgumentError("unary potential must be nonnegative with positive sum");
  }
  for (const auto& f : factors_) {
    if (f.neighbors.empty()) throw ArgumentError("factor has no neighbors");
    switch (f.kind) {
      case FactorKind::DenseTable: {
        const auto* p = std::get_if<DenseTablePayload>(&f.payload);
        if (!p) throw ArgumentError("dense factor missing table payload");
        if (static_cast<double>(p->table.size()) != joint_configurations(f.id))
          throw ArgumentError("dense factor table size must be one entry per joint configuration");
        break;
      }
      case FactorKind::TypeA: {
        const auto* p = std::get_if<ValencePayload>(&f.payload);
        if (!p) throw ArgumentError("valence factor missing spec payload");
        if (p->spec.neighbor_count != static_cast<int>(f.neighbors.size()))
          throw ArgumentError("valence factor neighbor count mismatch");
        for (int v : f.neighbors)
          if (variable(v).domain_size != p->spec.neighbor_domain_size)
            throw ArgumentError("valence factor neighbor domain size mismatch");
        break;
      }
      case FactorKind::TypeB:
      case FactorKind::TypeC: {
        if (!std::holds_alternative<LowRankPayload>(f.payload))
          throw ArgumentError("low-rank factor missing payload");
        break;
      }
    }
  }
  // Adjacency consistency both ways.
  for (int i = 0; i < num_variables(); ++i) {
    for (const auto& [a, slot] : factors_of(i)) {
      const FactorNode& f = factor(a);
      if (slot < 0 || slot >= static_cast<int>(f.neighbors.size()) ||
          f.neighbors[static_cast<std::size_t>(slot)] != i)
        throw ArgumentError("variable adjacency entry inconsistent with factor neighbor list");
    }
  }
  std::vector<int> degree(static_cast<std::size_t>(num_variables()), 0);
  for (const auto& f : factors_)
    for (int v : f.neighbors) ++degree[static_cast<std::size_t>(v)];
  for (int i = 0; i < num_variables(); ++i)
    if (degree[static_cast<std::size_t>(i)] != static_cast<int>(factors_of(i).size()))
      throw ArgumentError("variable degree inconsistent with adjacency map");
}

void BPSchedule::validate() const {
  if (max_iterations < 1) throw ArgumentError("max_iterations must be >= 1");
  if (damping < 0.0 || damping >= 1.0) throw ArgumentError("damping must lie in [0, 1)");
  if (convergence_tol <= 0.0) throw ArgumentError("convergence_tol must be positive");
}

MessageStore MessageStore::uniform_init(const FactorGraph& g) {
  MessageStore s;
  s.factor_to_var.resize(static_cast<std::size_t>(g.num_factors()));
  s.var_to_factor.resize(static_cast<std::size_t>(g.num_factors()));
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factor(a);
    for (int v : f.neighbors) {
      s.factor_to_var[static_cast<std::size_t>(a)].push_back(
          DiscreteDistribution::uniform(g.variable(v).domain_size));
      s.var_to_factor[static_cast<std::size_t>(a)].push_back(
          DiscreteDistribution::uniform(g.variable(v).domain_size));
    }
  }
  return s;
}

}  // namespace mfgn
