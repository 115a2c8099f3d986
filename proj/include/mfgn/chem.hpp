#pragma once

#include <map>
#include <string>
#include <vector>

namespace mfgn {

enum class Element { C, O, FakeH };

int element_valence(Element e); // C=4, O=2
int element_mass(Element e);    // C=12, O=16, H=1

struct Atom {
  Element element = Element::C;
  int nominal_mass = 12;
  int valence = 4; // FakeH carries the molecule's total hydrogen count
  int index = -1;  // position in the canonical order
};

struct Peak {
  int mz = 0;
  double intensity = 0.0;
};

// Heavy-atom graph in SMILES traversal order, before hydrogen collapsing.
struct HeavyGraph {
  std::vector<Element> elements; // C/O only
  struct Bond {
    int a = 0, b = 0, order = 1;
  };
  std::vector<Bond> bonds;
  std::vector<int> implicit_h;

  int num_atoms() const { return static_cast<int>(elements.size()); }
  int total_hydrogens() const;
  std::map<std::string, int> formula() const; // element symbol -> count, includes H
};

// Supported subset: atoms C and O, branches (...), bond symbols = and #,
// ring-closure digits 1-9, implicit hydrogens. Throws ParseError with the
// byte position on malformed input and ValenceError when explicit bonds
// exceed an atom's valence.
HeavyGraph parse_smiles(const std::string& text);

// Emits a SMILES string in the same subset: DFS from atom 0, spanning-tree
// bonds inline or as branches, remaining bonds as ring closures.
std::string write_smiles(const HeavyGraph& g);

// Sum of count * nominal mass. Unknown element symbols are rejected.
int formula_mass(const std::map<std::string, int>& formula);

// Heavy atoms plus one appended fake hydrogen atom; each heavy atom with h
// implicit hydrogens gets a FakeH edge of multiplicity h.
struct CollapsedMolecule {
  std::vector<Atom> atoms;              // SMILES order, FakeH last
  std::vector<std::vector<int>> bonds;  // symmetric multiplicity matrix

  int num_atoms() const { return static_cast<int>(atoms.size()); }
};

CollapsedMolecule collapse_hydrogens(const HeavyGraph& g);

// order[k] = index in `mol` of the atom at canonical position k. Carbons
// first in traversal order, then oxygens, FakeH last. With anchoring, the
// ester C(=O)O atoms take positions 0..2 when the substructure is present.
std::vector<int> canonical_order(const CollapsedMolecule& mol, bool anchor_ester = true);

struct MoleculeInstance {
  std::map<std::string, int> formula;
  std::vector<Atom> atoms;                    // canonical order
  std::vector<std::vector<int>> bond_matrix;  // n x n, entries 0..4
  std::vector<Peak> peaks;
  std::string smiles;

  int num_atoms() const { return static_cast<int>(atoms.size()); }
  int num_heavy() const;
  // Symmetry, zero diagonal, row sums equal to atom valences.
  void validate() const;
};

MoleculeInstance make_instance(const std::string& smiles, std::vector<Peak> peaks,
                               bool anchor_ester = true);

// Upper-triangle entries in row-major order, n(n-1)/2 of them.
std::vector<int> label_matrix(const MoleculeInstance& inst);
std::vector<int> upper_triangle(const std::vector<std::vector<int>>& matrix);
std::vector<std::vector<int>> matrix_from_labels(const std::vector<int>& labels, int n);

}  // namespace mfgn
