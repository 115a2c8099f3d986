#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mfgn/graph_build.hpp"
#include "mfgn/mlp.hpp"
#include "mfgn/valence.hpp"

namespace mfgn {

struct ModelConfig {
  int hidden_size = 32;
  int rank = 8;
  int iterations = 4;  // neuralized message-passing iterations T
  int init_rounds = 2; // initializer MPNN rounds
  int mlp_layers = 2;  // 1 or 2
  Activation activation = Activation::Tanh;
  SharingLevel sharing_b = SharingLevel::Medium;
  SharingLevel sharing_c = SharingLevel::Medium;
  int k_clusters = 16;
  bool valence_bridge = true; // Type A coupling into edge states
  bool bc_factors = true;     // Type B/C low-rank terms
  int max_atoms = 16;         // position-embedding table size
  std::uint64_t seed = 1;

  void validate() const;
};

// Evaluation-time ablations: terms are dropped from the forward pass.
struct AblationFlags {
  bool drop_valence = false;
  bool drop_bc = false;
};

// Named dense tensors with deterministic lazy initialization: a missing
// tensor is created from a stream seeded by (store seed, name hash), so any
// sharing key resolves identically whether or not it was seen in training.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Eigen::MatrixXd& get(const std::string& name, int rows, int cols, bool zero_init = false);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  const std::map<std::string, Eigen::MatrixXd>& tensors() const { return tensors_; }
  std::map<std::string, Eigen::MatrixXd>& mutable_tensors() { return tensors_; }

  Eigen::MatrixXd& grad(const std::string& name);
  std::map<std::string, Eigen::MatrixXd>& grads() { return grads_; }
  void zero_grads();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Eigen::MatrixXd> tensors_;
  std::map<std::string, Eigen::MatrixXd> grads_;
};

// Per-iteration caches for the backward pass.
struct IterTrace {
  std::vector<Eigen::VectorXd> h;   // states at iteration start
  std::vector<Eigen::VectorXd> agg; // MLP inputs
  std::vector<MlpTape> mlp_tapes;
  // Type B: per edge slot, projections (u_y, u_i, u_j).
  std::vector<std::array<Eigen::VectorXd, 3>> b_u;
  // Type C: per peak, u_z plus per-atom u_x and their prefix/suffix products.
  std::vector<Eigen::VectorXd> c_uz;
  std::vector<std::vector<Eigen::VectorXd>> c_ux;
  std::vector<std::vector<Eigen::VectorXd>> c_prefix;
  std::vector<std::vector<Eigen::VectorXd>> c_suffix;
  // Valence bridge: per edge softmax distribution, per atom the DP tape.
  std::vector<Eigen::VectorXd> g;
  std::vector<std::shared_ptr<ValenceTape>> atom_tapes;
};

struct InitTrace {
  std::vector<Eigen::VectorXd> embed; // raw embeddings
  std::vector<std::vector<Eigen::VectorXd>> round_in;  // states entering round r
  std::vector<std::vector<Eigen::VectorXd>> round_out; // tanh outputs of round r
  std::vector<Eigen::Vector3d> peak_inputs;
};

struct NetTrace {
  InitTrace init;
  std::vector<IterTrace> iters;
  std::vector<Eigen::VectorXd> h_final;
};

// The trainable network: MPNN initializer, T iterations of low-rank factor
// updates (sum+MLP for atoms and peaks, multiplicative single-factor term
// for edges) with residual connections and the valence-DP bridge on edge
// states, then a linear readout to 5-class bond logits per edge slot.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  SharingPolicy& sharing() { return sharing_; }
  const SharingPolicy& sharing() const { return sharing_; }

  // Fits peak cluster centers (C-Medium) from the training molecules.
  void fit_sharing(const std::vector<MoleculeInstance>& train);

  BuiltGraph build(const MoleculeInstance& inst) const;

  // Initial hidden states: embeddings plus init_rounds coupling rounds over
  // the atom-edge incidence skeleton.
  std::vector<Eigen::VectorXd> init_states(const BuiltGraph& bg, const MoleculeInstance& inst,
                                           InitTrace* trace = nullptr);

  // Edge logits, one row per edge slot. The trace enables backward().
  Eigen::MatrixXd forward(const BuiltGraph& bg, const MoleculeInstance& inst, NetTrace* trace = nullptr,
                          const AblationFlags& ablation = {});

  // Accumulates parameter gradients for d(loss)/d(logits).
  void backward(const BuiltGraph& bg, const MoleculeInstance& inst, const NetTrace& trace,
                const Eigen::MatrixXd& d_logits, const AblationFlags& ablation = {});

 private:
  MlpParams make_mlp(const std::string& prefix);
  void mlp_grads_into(const std::string& prefix, const MlpGradients& g);

  ModelConfig cfg_;
  SharingPolicy sharing_;
  ParamStore store_;
  Eigen::MatrixXd bridge_down_; // fixed 5 x H selector feeding the softmax
  Eigen::MatrixXd bridge_up_;   // fixed H x 5 injection of valence messages
};

}  // namespace mfgn
