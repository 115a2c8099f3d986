#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mfgn/chem.hpp"
#include "mfgn/model.hpp"

namespace mfgn {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  enum class Optimizer { Sgd, Adam } optimizer = Optimizer::Adam;
  double val_fraction = 0.15;
  double perm_cap = 1e4; // exhaustive permutation search while prod(block!) <= cap
  std::uint64_t seed = 1;

  void validate() const;
};

struct MetricsRecord {
  double loss = 0.0;
  double accuracy = 0.0;       // mean over molecules of per-entry accuracy (full triangle)
  double valence_rate = 0.0;   // fraction of atoms with exactly satisfied valence
  double accuracy_heavy = 0.0; // same accuracy restricted to heavy-heavy entries
};

// Index groups allowed to permute: same-element blocks, FakeH alone.
std::vector<std::vector<int>> element_blocks(const MoleculeInstance& inst);

struct PermutationLoss {
  double loss = 0.0;
  std::vector<int> permutation; // perm[i] = source atom for target position i
};

// Mean cross-entropy between the permuted prediction matrix and the label,
// minimized over within-block permutations. Exhaustive while the product of
// block factorials stays under the cap, greedy pairwise swaps otherwise; the
// identity is always a candidate.
PermutationLoss permutation_min_loss(const Eigen::MatrixXd& logits, const MoleculeInstance& inst,
                                     double perm_cap = 1e4);

// Cross-entropy at a fixed atom permutation; optional gradient wrt logits.
double permuted_cross_entropy(const Eigen::MatrixXd& logits, const MoleculeInstance& inst,
                              const std::vector<int>& perm, Eigen::MatrixXd* d_logits = nullptr);

// Accuracy of predicting bond class 0 everywhere (comparison baseline).
double all_zero_accuracy(const std::vector<MoleculeInstance>& dataset);

// Argmax metrics of one molecule's edge logits: per-entry accuracy over the
// full triangle and over heavy-heavy entries, plus per-atom valence
// satisfaction counts.
struct MoleculeMetrics {
  double accuracy = 0.0;
  double accuracy_heavy = 0.0;
  int atoms_satisfied = 0;
  int atoms_total = 0;
};

MoleculeMetrics molecule_metrics(const MoleculeInstance& inst, const Eigen::MatrixXd& logits);

MetricsRecord evaluate(Model& model, const std::vector<MoleculeInstance>& dataset,
                       const AblationFlags& ablation = {}, double perm_cap = 1e4);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  MetricsRecord val;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  bool aborted = false;
};

// Mini-batch training on permutation-min cross-entropy. Deterministic given
// the config seed; keeps the best-validation parameter snapshot and restores
// it at the end (or the last finite snapshot if the loss diverges).
TrainResult train(Model& model, const std::vector<MoleculeInstance>& dataset, const TrainConfig& cfg);

// Versioned JSON checkpoint: config echo, seed, sharing centers and every
// parameter tensor. Loading refuses other format versions.
std::string checkpoint_to_json(const Model& model);
Model model_from_checkpoint_json(const std::string& text);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace mfgn
