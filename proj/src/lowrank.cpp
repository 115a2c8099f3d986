#include "mfgn/lowrank.hpp"

#include "mfgn/error.hpp"

namespace mfgn {

void LowRankFactorParams::validate() const {
  if (rank < 1) throw ArgumentError("low-rank factor rank must be >= 1");
  if (weights.empty()) throw ArgumentError("low-rank factor needs at least one weight matrix");
  for (const auto& w : weights) {
    if (w.cols() != rank) throw ArgumentError("low-rank weight matrices must share the factor rank");
    if (!w.allFinite()) throw ArgumentError("low-rank weight matrix has non-finite entries");
  }
}

Eigen::VectorXd lowrank_message(const LowRankFactorParams& params,
                                const std::vector<Eigen::VectorXd>& incoming, int target_slot) {
  params.validate();
  const int slots = static_cast<int>(params.weights.size());
  if (target_slot < 0 || target_slot >= slots) throw ArgumentError("low-rank target slot out of range");
  if (static_cast<int>(incoming.size()) != slots)
    throw ArgumentError("low-rank incoming message count must match slot count");

  Eigen::VectorXd acc = Eigen::VectorXd::Ones(params.rank);
  for (int j = 0; j < slots; ++j) {
    if (j == target_slot) continue;
    const auto& w = params.weights[static_cast<std::size_t>(j)];
    const auto& m = incoming[static_cast<std::size_t>(j)];
    if (m.size() != w.rows()) throw ArgumentError("low-rank incoming message length mismatch");
    acc = acc.cwiseProduct(w.transpose() * m);
  }
  return params.weights[static_cast<std::size_t>(target_slot)] * acc;
}

Eigen::VectorXd lowrank_term_value(const LowRankTerm& term) {
  if (term.target_weight == nullptr) throw ArgumentError("low-rank term needs a target weight");
  if (term.other_weights.size() != term.other_states.size())
    throw ArgumentError("low-rank term weight/state count mismatch");
  const Eigen::Index r = term.target_weight->cols();
  Eigen::VectorXd acc = Eigen::VectorXd::Ones(r);
  for (std::size_t j = 0; j < term.other_weights.size(); ++j) {
    const auto& w = *term.other_weights[j];
    const auto& h = *term.other_states[j];
    if (w.cols() != r) throw ArgumentError("low-rank term rank mismatch");
    if (h.size() != w.rows()) throw ArgumentError("low-rank term state length mismatch");
    acc = acc.cwiseProduct(w.transpose() * h);
  }
  return *term.target_weight * acc;
}

Eigen::VectorXd neuralized_update(const Eigen::VectorXd& h_i, const std::vector<LowRankTerm>& terms,
                                  const MlpParams& mlp) {
  Eigen::VectorXd agg = Eigen::VectorXd::Zero(mlp.input_size());
  for (const auto& term : terms) {
    Eigen::VectorXd v = lowrank_term_value(term);
    if (v.size() != agg.size()) throw ArgumentError("low-rank term output size mismatch");
    agg += v;
  }
  Eigen::VectorXd delta = mlp_forward(mlp, agg);
  if (delta.size() != h_i.size()) throw ArgumentError("MLP output must match hidden state size");
  return h_i + delta;
}

}  // namespace mfgn
