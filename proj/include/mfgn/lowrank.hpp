#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mfgn/mlp.hpp"

namespace mfgn {

// CP-style factor approximation: one (domain_or_hidden_size x rank) weight
// matrix per neighbor slot. The factor's implied table is
// T(x_1..x_k) = sum_r prod_j W_j(x_j, r).
struct LowRankFactorParams {
  int rank = 1;
  std::vector<Eigen::MatrixXd> weights; // per neighbor slot

  void validate() const;
};

// m_{a->i} = W_{a_i} [ prod_{j != i} (W_{a_j}^T m_j) ], componentwise product
// over the rank dimension. Raw output, no normalization. incoming[target_slot]
// is ignored.
Eigen::VectorXd lowrank_message(const LowRankFactorParams& params,
                                const std::vector<Eigen::VectorXd>& incoming,
                                int target_slot);

// One incident low-rank factor seen from a target variable.
struct LowRankTerm {
  const Eigen::MatrixXd* target_weight = nullptr;
  std::vector<const Eigen::MatrixXd*> other_weights;
  std::vector<const Eigen::VectorXd*> other_states;
};

Eigen::VectorXd lowrank_term_value(const LowRankTerm& term);

// h' = h + MLP(sum over incident factor terms). Terms are accumulated in the
// order given; callers sort by factor id so runs are reproducible bit for bit.
Eigen::VectorXd neuralized_update(const Eigen::VectorXd& h_i,
                                  const std::vector<LowRankTerm>& terms,
                                  const MlpParams& mlp);

}  // namespace mfgn
