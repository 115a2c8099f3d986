#include "mfgn/lbp.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "mfgn/error.hpp"

namespace mfgn {

namespace {

// Above this many product terms, accumulate in log space.
constexpr int kLogSpaceThreshold = 8;

// Componentwise product of `terms` (each a distribution over the same
// domain), normalized. Throws DegenerateMessageError if the product is zero
// everywhere.
DiscreteDistribution normalized_product(const std::vector<const DiscreteDistribution*>& terms,
                                        int domain_size) {
  if (terms.empty()) return DiscreteDistribution::uniform(domain_size);

  DiscreteDistribution out(std::vector<double>(static_cast<std::size_t>(domain_size), 0.0));
  if (static_cast<int>(terms.size()) <= kLogSpaceThreshold) {
    for (int x = 0; x < domain_size; ++x) {
      double p = 1.0;
      for (const auto* t : terms) p *= (*t)[x];
      out[x] = p;
    }
    out.normalize();
    return out;
  }

  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(static_cast<std::size_t>(domain_size), 0.0);
  double max_log = neg_inf;
  for (int x = 0; x < domain_size; ++x) {
    double acc = 0.0;
    for (const auto* t : terms) {
      const double v = (*t)[x];
      if (v <= 0.0) {
        acc = neg_inf;
        break;
      }
      acc += std::log(v);
    }
    logs[static_cast<std::size_t>(x)] = acc;
    max_log = std::max(max_log, acc);
  }
  if (max_log == neg_inf) throw DegenerateMessageError("all-zero message product");
  for (int x = 0; x < domain_size; ++x) {
    const double lx = logs[static_cast<std::size_t>(x)];
    out[x] = (lx == neg_inf) ? 0.0 : std::exp(lx - max_log);
  }
  out.normalize();
  return out;
}

void check_finite_message(const DiscreteDistribution& m, int factor_id, int var_id) {
  if (!m.all_finite())
    throw NumericalError("non-finite message between factor " + std::to_string(factor_id) +
                         " and variable " + std::to_string(var_id));
}

}  // namespace

DiscreteDistribution variable_to_factor_message(const FactorGraph& graph, const MessageStore& state,
                                                int var_id, int factor_id) {
  graph.slot_of(factor_id, var_id); // adjacency check

  const VariableNode& var = graph.variable(var_id);
  std::vector<const DiscreteDistribution*> terms;
  terms.push_back(&var.unary_potential);
  for (const auto& [c, slot] : graph.factors_of(var_id)) {
    if (c == factor_id) continue;
    terms.push_back(&state.factor_to_var[static_cast<std::size_t>(c)][static_cast<std::size_t>(slot)]);
  }
  return normalized_product(terms, var.domain_size);
}

DiscreteDistribution dense_factor_to_variable_message(const FactorGraph& graph, const MessageStore& state,
                                                      int factor_id, int var_id, double config_cap) {
  const FactorNode& f = graph.factor(factor_id);
  if (f.kind != FactorKind::DenseTable) throw ArgumentError("factor is not a dense-table factor");
  const auto& payload = std::get<DenseTablePayload>(f.payload);
  const int target_slot = graph.slot_of(factor_id, var_id);
  if (graph.joint_configurations(factor_id) > config_cap)
    throw CapacityError("dense factor joint configuration count exceeds cap");

  const int arity = static_cast<int>(f.neighbors.size());
  std::vector<int> domains(static_cast<std::size_t>(arity));
  for (int s = 0; s < arity; ++s)
    domains[static_cast<std::size_t>(s)] = graph.variable(f.neighbors[static_cast<std::size_t>(s)]).domain_size;

  DiscreteDistribution out(
      std::vector<double>(static_cast<std::size_t>(domains[static_cast<std::size_t>(target_slot)]), 0.0));
  std::vector<int> assign(static_cast<std::size_t>(arity), 0);
  for (std::size_t flat = 0; flat < payload.table.size(); ++flat) {
    std::size_t rem = flat; // last slot varies fastest
    for (int s = arity - 1; s >= 0; --s) {
      assign[static_cast<std::size_t>(s)] = static_cast<int>(rem % static_cast<std::size_t>(domains[static_cast<std::size_t>(s)]));
      rem /= static_cast<std::size_t>(domains[static_cast<std::size_t>(s)]);
    }
    double w = payload.table[flat];
    if (w == 0.0) continue;
    for (int s = 0; s < arity; ++s) {
      if (s == target_slot) continue;
      w *= state.var_to_factor[static_cast<std::size_t>(factor_id)][static_cast<std::size_t>(s)]
                              [assign[static_cast<std::size_t>(s)]];
    }
    out[assign[static_cast<std::size_t>(target_slot)]] += w;
  }
  out.normalize(); // DegenerateMessageError propagates to the caller
  return out;
}

std::vector<DiscreteDistribution> factor_messages(const FactorGraph& graph, const MessageStore& state,
                                                  int factor_id, int* fallbacks) {
  const FactorNode& f = graph.factor(factor_id);
  const int arity = static_cast<int>(f.neighbors.size());
  std::vector<DiscreteDistribution> out;
  out.reserve(static_cast<std::size_t>(arity));

  switch (f.kind) {
    case FactorKind::DenseTable: {
      for (int s = 0; s < arity; ++s) {
        const int var_id = f.neighbors[static_cast<std::size_t>(s)];
        try {
          out.push_back(dense_factor_to_variable_message(graph, state, factor_id, var_id));
        } catch (const DegenerateMessageError&) {
          out.push_back(DiscreteDistribution::uniform(graph.variable(var_id).domain_size));
          if (fallbacks) ++*fallbacks;
        }
      }
      break;
    }
    case FactorKind::TypeA: {
      const auto& spec = std::get<ValencePayload>(f.payload).spec;
      const auto& incoming = state.var_to_factor[static_cast<std::size_t>(factor_id)];
      ValenceMessages vm = valence_messages(spec, incoming);
      for (int s = 0; s < arity; ++s) {
        if (vm.unsatisfiable[static_cast<std::size_t>(s)] && fallbacks) ++*fallbacks;
        out.push_back(std::move(vm.messages[static_cast<std::size_t>(s)]));
      }
      break;
    }
    case FactorKind::TypeB:
    case FactorKind::TypeC: {
      const auto& payload = std::get<LowRankPayload>(f.payload);
      if (!payload.params)
        throw ConfigError("low-rank factor " + std::to_string(factor_id) +
                          " has no inline params; no message implementation registered");
      std::vector<Eigen::VectorXd> incoming(static_cast<std::size_t>(arity));
      for (int s = 0; s < arity; ++s) {
        const auto& m = state.var_to_factor[static_cast<std::size_t>(factor_id)][static_cast<std::size_t>(s)];
        incoming[static_cast<std::size_t>(s)] =
            Eigen::Map<const Eigen::VectorXd>(m.values.data(), static_cast<Eigen::Index>(m.values.size()));
      }
      for (int s = 0; s < arity; ++s) {
        Eigen::VectorXd raw = lowrank_message(*payload.params, incoming, s);
        DiscreteDistribution msg(std::vector<double>(raw.data(), raw.data() + raw.size()));
        // CP compositions of nonnegative tables can drift slightly negative
        // in floating point; clamp before normalizing.
        for (double& v : msg.values) v = std::max(v, 0.0);
        if (!msg.all_finite() || msg.sum() <= 0.0) {
          out.push_back(DiscreteDistribution::uniform(graph.variable(f.neighbors[static_cast<std::size_t>(s)]).domain_size));
          if (fallbacks) ++*fallbacks;
        } else {
          msg.normalize();
          out.push_back(std::move(msg));
        }
      }
      break;
    }
  }
  return out;
}

std::vector<DiscreteDistribution> beliefs_from(const FactorGraph& graph, const MessageStore& state,
                                               int* fallbacks) {
  std::vector<DiscreteDistribution> beliefs;
  beliefs.reserve(static_cast<std::size_t>(graph.num_variables()));
  for (int i = 0; i < graph.num_variables(); ++i) {
    const VariableNode& var = graph.variable(i);
    std::vector<const DiscreteDistribution*> terms;
    terms.push_back(&var.unary_potential);
    for (const auto& [a, slot] : graph.factors_of(i))
      terms.push_back(&state.factor_to_var[static_cast<std::size_t>(a)][static_cast<std::size_t>(slot)]);
    try {
      beliefs.push_back(normalized_product(terms, var.domain_size));
    } catch (const DegenerateMessageError&) {
      beliefs.push_back(DiscreteDistribution::uniform(var.domain_size));
      if (fallbacks) ++*fallbacks;
    }
  }
  return beliefs;
}

BeliefSet run_lbp(const FactorGraph& graph, const BPSchedule& schedule) {
  schedule.validate();
  graph.validate();

  MessageStore store = MessageStore::uniform_init(graph);
  const double d = schedule.damping;

  BeliefSet result;
  bool warned = false;
  for (int iter = 1; iter <= schedule.max_iterations; ++iter) {
    double delta = 0.0;

    // Phase 1: factor -> variable, from the previous round's store.
    std::vector<std::vector<DiscreteDistribution>> new_f2v(static_cast<std::size_t>(graph.num_factors()));
    for (int a = 0; a < graph.num_factors(); ++a) {
      int fb = 0;
      new_f2v[static_cast<std::size_t>(a)] = factor_messages(graph, store, a, &fb);
      result.degenerate_fallbacks += fb;
      const auto& f = graph.factor(a);
      for (std::size_t s = 0; s < f.neighbors.size(); ++s) {
        auto& fresh = new_f2v[static_cast<std::size_t>(a)][s];
        const auto& old = store.factor_to_var[static_cast<std::size_t>(a)][s];
        if (d > 0.0)
          for (int x = 0; x < fresh.size(); ++x) fresh[x] = (1.0 - d) * fresh[x] + d * old[x];
        check_finite_message(fresh, a, f.neighbors[s]);
        delta = std::max(delta, fresh.max_abs_diff(old));
      }
    }
    store.factor_to_var = std::move(new_f2v);

    // Phase 2: variable -> factor, from the fresh factor messages.
    for (int a = 0; a < graph.num_factors(); ++a) {
      const auto& f = graph.factor(a);
      for (std::size_t s = 0; s < f.neighbors.size(); ++s) {
        const int i = f.neighbors[s];
        DiscreteDistribution fresh;
        try {
          fresh = variable_to_factor_message(graph, store, i, a);
        } catch (const DegenerateMessageError&) {
          fresh = DiscreteDistribution::uniform(graph.variable(i).domain_size);
          ++result.degenerate_fallbacks;
          if (!warned) {
            std::cerr << "[mfgn] warning: degenerate all-zero message product; using uniform fallback\n";
            warned = true;
          }
        }
        auto& old = store.var_to_factor[static_cast<std::size_t>(a)][s];
        if (d > 0.0)
          for (int x = 0; x < fresh.size(); ++x) fresh[x] = (1.0 - d) * fresh[x] + d * old[x];
        check_finite_message(fresh, a, i);
        delta = std::max(delta, fresh.max_abs_diff(old));
        old = std::move(fresh);
      }
    }

    result.iterations = iter;
    result.final_delta = delta;
    if (delta <= schedule.convergence_tol) {
      result.converged = true;
      break;
    }
  }

  int fb = 0;
  result.beliefs = beliefs_from(graph, store, &fb);
  result.degenerate_fallbacks += fb;
  return result;
}

}  // namespace mfgn
