#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mfgn/chem.hpp"
#include "mfgn/factor_graph.hpp"

namespace mfgn {

enum class SharingLevel { Low, Medium, High };

SharingLevel sharing_level_from_string(const std::string& s);
std::string to_string(SharingLevel level);

// How Type B and Type C factor weights are shared across factors.
// B: Low = one set, Medium = per unordered element pair, High = per (i, j)
// index pair. C: Low = one set, Medium = nearest peak cluster center,
// High = per m/z value.
struct SharingPolicy {
  SharingLevel level_b = SharingLevel::Medium;
  SharingLevel level_c = SharingLevel::Medium;
  int k_clusters = 16;
  std::vector<double> cluster_centers; // sorted ascending, for C-Medium

  void validate() const;
};

// Factor graph for one molecule: per atom a valence factor (Type A) over all
// incident edge slots, per edge slot a Type B factor over (edge, atom_i,
// atom_j), per spectrum peak a Type C factor over (peak, all atoms).
struct BuiltGraph {
  FactorGraph graph;
  std::vector<int> atom_vars;
  std::vector<int> peak_vars;
  std::vector<std::pair<int, int>> edge_slots; // slot -> (i, j), i < j, row-major
  std::vector<int> edge_vars;                  // slot -> variable id
  std::vector<int> atom_factors;               // Type A factor ids per atom
  std::vector<int> edge_factors;               // Type B factor ids per slot
  std::vector<int> peak_factors;               // Type C factor ids per peak
  std::map<int, std::string> factor_param_key; // Type B/C factor id -> sharing key

  int edge_slot_index(int i, int j) const; // i != j, order-insensitive
};

BuiltGraph build_graph(const MoleculeInstance& inst, const SharingPolicy& policy);

std::string sharing_key_b(const SharingPolicy& policy, int i, int j, Element ei, Element ej);
std::string sharing_key_c(const SharingPolicy& policy, int mz);

// Index of the nearest cluster center (ties break to the lower index).
int nearest_center(const std::vector<double>& centers, double value);

// Seeded 1-D K-means over peak m/z values: deterministic D^2-weighted
// initialization, Lloyd iterations to an assignment fixpoint (at most 100
// rounds), centers returned sorted ascending.
std::vector<double> fit_peak_clusters(const std::vector<int>& mzs, int k, std::uint64_t seed = 0);

}  // namespace mfgn
