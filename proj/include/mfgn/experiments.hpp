#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mfgn/chem.hpp"
#include "mfgn/distribution.hpp"
#include "mfgn/learn.hpp"
#include "mfgn/rng.hpp"

namespace mfgn {

struct DatasetSpec {
  int molecule_count = 200;
  int min_heavy = 5;
  int max_heavy = 13;
  bool ester = true;          // anchor every molecule on a C(=O)O group
  int max_peaks = 12;         // keep the strongest peaks
  double ring_prob = 0.25;    // chance of one extra ring-closing bond
  double double_bond_prob = 0.12;
  double triple_bond_prob = 0.03;
  std::uint64_t seed = 1;

  void validate() const;
};

// Random C/O skeletons (acyclic or single-ring) satisfying valence rules,
// optionally ester-anchored. Spectra are simulated by cutting every single
// bond and recording fragment nominal masses; intensity is proportional to
// how often a mass appears, scaled to a maximum of 1.
std::vector<MoleculeInstance> generate_dataset(const DatasetSpec& spec);

// JSON Lines: one record per molecule with fields smiles, formula, peaks,
// matrix (upper triangle), n_atoms.
std::string dataset_to_jsonl(const std::vector<MoleculeInstance>& dataset);
std::vector<MoleculeInstance> dataset_from_jsonl(const std::string& text);
void write_dataset(const std::string& path, const std::vector<MoleculeInstance>& dataset);
std::vector<MoleculeInstance> read_dataset(const std::string& path);

// Plain-text spectrum import: one "mz intensity" pair per line, '#' comments.
std::vector<Peak> parse_spectrum_text(const std::string& text);

// onehot(c) + iid Exponential(scale=beta) noise, normalized.
DiscreteDistribution perturb_onehot(int cls, int domain, double beta, Rng& rng);

enum class DecodeCombination { Initial, Sum, Multiply };

DecodeCombination decode_combination_from_string(const std::string& s);
std::string to_string(DecodeCombination c);

struct NoiseConfig {
  double beta = 1.0;
  int trials = 5;
  int decode_rounds = 1;
  DecodeCombination combination = DecodeCombination::Multiply;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DecodeMetrics {
  double accuracy = 0.0;     // mean over molecules of per-edge argmax accuracy
  double valence_rate = 0.0; // fraction of atoms with exactly satisfied valence
};

// Perturb every edge's ground-truth one-hot, then run decode_rounds rounds
// of valence-factor messages, combining each edge's two incoming messages
// with its belief by Sum or Multiply. Initial skips decoding.
DecodeMetrics noise_decode(const std::vector<MoleculeInstance>& dataset, const NoiseConfig& cfg);

// One row per (beta, combination); averaged over trials.
struct NoiseReportRow {
  double beta = 0.0;
  std::string combination;
  double accuracy = 0.0;
  double valence_rate = 0.0;
};

std::vector<NoiseReportRow> noise_decode_table(const std::vector<MoleculeInstance>& dataset,
                                               const std::vector<double>& betas, int trials,
                                               int decode_rounds, std::uint64_t seed);

struct AblationRow {
  std::string name;
  MetricsRecord metrics;
};

// Evaluates the given trained models plus eval-time ablations of the
// "medium" model (valence factor dropped; B/C factors dropped).
std::vector<AblationRow> run_ablations(std::map<std::string, Model*> models,
                                       const std::vector<MoleculeInstance>& test);

// SHA-1 of the git blob framing ("blob <len>\0" + content), hex digest.
std::string git_blob_sha1(const std::string& content);

std::string report_to_json(const std::string& kind, const std::map<std::string, std::string>& config_echo,
                           const std::string& dataset_hash, const std::vector<NoiseReportRow>& rows);
std::string ablation_report_to_json(const std::map<std::string, std::string>& config_echo,
                                    const std::string& dataset_hash, const std::vector<AblationRow>& rows);

}  // namespace mfgn
