#include <doctest.h>

#include "mfgn/chem.hpp"
#include "mfgn/error.hpp"

using namespace mfgn;

TEST_CASE("methyl decanoate parses to 11 C and 2 O with one double bond") {
  const auto g = parse_smiles("CCCCCCCCCC(=O)OC");
  REQUIRE(g.num_atoms() == 13);
  int c = 0, o = 0;
  for (Element e : g.elements) (e == Element::C ? c : o)++;
  CHECK(c == 11);
  CHECK(o == 2);
  CHECK(g.bonds.size() == 12);
  int doubles = 0;
  for (const auto& b : g.bonds)
    if (b.order == 2) ++doubles;
  CHECK(doubles == 1);
  const auto f = g.formula();
  CHECK(f.at("C") == 11);
  CHECK(f.at("H") == 22);
  CHECK(f.at("O") == 2);
}

TEST_CASE("methane is a single carbon with four implicit hydrogens") {
  const auto g = parse_smiles("C");
  REQUIRE(g.num_atoms() == 1);
  CHECK(g.implicit_h[0] == 4);
  CHECK(g.bonds.empty());
}

TEST_CASE("cyclopropane ring closure") {
  const auto g = parse_smiles("C1CC1");
  REQUIRE(g.num_atoms() == 3);
  CHECK(g.bonds.size() == 3);
  for (int h : g.implicit_h) CHECK(h == 2);
}

TEST_CASE("parse errors carry positions") {
  CHECK_THROWS_AS(parse_smiles(""), ParseError);
  CHECK_THROWS_AS(parse_smiles("CN"), ParseError);      // unsupported element
  CHECK_THROWS_AS(parse_smiles("C(C"), ParseError);     // unclosed branch
  CHECK_THROWS_AS(parse_smiles("C)C"), ParseError);     // unmatched ')'
  CHECK_THROWS_AS(parse_smiles("C1CC"), ParseError);    // unclosed ring
  CHECK_THROWS_AS(parse_smiles("C="), ParseError);      // dangling bond
  CHECK_THROWS_AS(parse_smiles("=C"), ParseError);      // bond before any atom
  CHECK_THROWS_AS(parse_smiles("C=#C"), ParseError);    // double bond symbol
  CHECK_THROWS_AS(parse_smiles("C11"), ParseError);     // self ring
  CHECK_THROWS_AS(parse_smiles("C=(O)"), ParseError);   // bond before '('

  try {
    parse_smiles("CCX");
  } catch (const ParseError& e) {
    CHECK(e.position == 2);
  }
}

TEST_CASE("valence violations are rejected") {
  CHECK_THROWS_AS(parse_smiles("O=C=O=O"), ValenceError); // O with two double bonds
  CHECK_THROWS_AS(parse_smiles("C(=O)(=O)=O"), ValenceError);
}

TEST_CASE("formula_mass matches nominal arithmetic") {
  CHECK(formula_mass({{"C", 11}, {"H", 22}, {"O", 2}}) == 186);
  CHECK(formula_mass({{"C", 1}, {"H", 4}}) == 16);
  CHECK(formula_mass({}) == 0);
  CHECK_THROWS_AS(formula_mass({{"N", 1}}), ArgumentError);
}

TEST_CASE("collapse appends one fake hydrogen atom") {
  const auto mol = collapse_hydrogens(parse_smiles("C"));
  REQUIRE(mol.num_atoms() == 2);
  CHECK(mol.atoms[1].element == Element::FakeH);
  CHECK(mol.atoms[1].valence == 4);
  CHECK(mol.bonds[0][1] == 4);
}

TEST_CASE("terminal CH3 carbons get FakeH multiplicity 3") {
  const auto g = parse_smiles("CCCCCCCCCC(=O)OC");
  const auto mol = collapse_hydrogens(g);
  const int fake = mol.num_atoms() - 1;
  CHECK(mol.bonds[0][static_cast<std::size_t>(fake)] == 3);  // chain-start CH3
  CHECK(mol.bonds[12][static_cast<std::size_t>(fake)] == 3); // O-methyl CH3
  CHECK(mol.atoms[static_cast<std::size_t>(fake)].valence == 22);
}

TEST_CASE("fully substituted carbon has no FakeH edge") {
  const auto mol = collapse_hydrogens(parse_smiles("C(C)(C)(C)C")); // neopentane
  const int fake = mol.num_atoms() - 1;
  CHECK(mol.bonds[0][static_cast<std::size_t>(fake)] == 0);
  for (int i = 1; i < 5; ++i) CHECK(mol.bonds[static_cast<std::size_t>(i)][static_cast<std::size_t>(fake)] == 3);
}

TEST_CASE("element-block ordering without anchoring matches the relabeling example") {
  const auto mol = collapse_hydrogens(parse_smiles("CCCCCCCCCC(=O)OC"));
  const auto order = canonical_order(mol, /*anchor_ester=*/false);
  REQUIRE(order.size() == 14);
  // C block: SMILES carbons 0..9 then 12; O block: 10, 11; FakeH last.
  for (int p = 0; p < 10; ++p) CHECK(order[static_cast<std::size_t>(p)] == p);
  CHECK(order[10] == 12);
  CHECK(order[11] == 10);
  CHECK(order[12] == 11);
  CHECK(order[13] == 13);
}

TEST_CASE("ester anchoring puts C(=O)O first") {
  const auto mol = collapse_hydrogens(parse_smiles("CCCCCCCCCC(=O)OC"));
  const auto order = canonical_order(mol, /*anchor_ester=*/true);
  CHECK(order[0] == 9);  // ester carbon
  CHECK(order[1] == 10); // carbonyl oxygen
  CHECK(order[2] == 11); // ester oxygen
  CHECK(order[13] == 13);
}

TEST_CASE("all-carbon molecules keep their traversal order") {
  const auto mol = collapse_hydrogens(parse_smiles("CCCC"));
  const auto order = canonical_order(mol);
  for (std::size_t p = 0; p < order.size(); ++p) CHECK(order[p] == static_cast<int>(p));
}

TEST_CASE("canonical order is idempotent") {
  auto inst = make_instance("CCCCCCCCCC(=O)OC", {{186, 1.0}});
  CollapsedMolecule as_collapsed;
  as_collapsed.atoms = inst.atoms;
  as_collapsed.bonds = inst.bond_matrix;
  const auto order = canonical_order(as_collapsed);
  for (std::size_t p = 0; p < order.size(); ++p) CHECK(order[p] == static_cast<int>(p));
}

TEST_CASE("branch-permuted SMILES of the same ester canonicalize identically") {
  const auto a = make_instance("CCCCCCCCCC(=O)OC", {{186, 1.0}});
  const auto b = make_instance("CCCCCCCCCC(OC)=O", {{186, 1.0}});
  REQUIRE(a.num_atoms() == b.num_atoms());
  CHECK(a.bond_matrix == b.bond_matrix);
  CHECK(a.formula == b.formula);
}

TEST_CASE("instance invariants: valence row sums") {
  const auto inst = make_instance("CCCCCCCCCC(=O)OC", {{186, 1.0}});
  inst.validate();
  CHECK(inst.num_atoms() == 14);
  CHECK(inst.num_heavy() == 13);

  const auto labels = label_matrix(inst);
  CHECK(labels.size() == 14u * 13u / 2u);

  int heavy_nonzero = 0, fake_nonzero = 0;
  for (int i = 0; i < 14; ++i)
    for (int j = i + 1; j < 14; ++j) {
      if (inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == 0) continue;
      const bool fake = inst.atoms[static_cast<std::size_t>(i)].element == Element::FakeH ||
                        inst.atoms[static_cast<std::size_t>(j)].element == Element::FakeH;
      (fake ? fake_nonzero : heavy_nonzero)++;
    }
  CHECK(heavy_nonzero == 12);
  CHECK(fake_nonzero == 10); // 2 CH3 + 8 CH2 carbons carry hydrogens
}

TEST_CASE("label matrix reconstruction is the identity") {
  const auto inst = make_instance("CC(=O)OC", {{74, 1.0}});
  const auto labels = label_matrix(inst);
  CHECK(matrix_from_labels(labels, inst.num_atoms()) == inst.bond_matrix);

  // And for a synthetic 13-atom matrix: 78 entries.
  std::vector<int> zeros(13 * 12 / 2, 0);
  CHECK(zeros.size() == 78u);
  const auto m = matrix_from_labels(zeros, 13);
  CHECK(upper_triangle(m) == zeros);
}

TEST_CASE("smiles writer round trips through the parser") {
  for (const char* s : {"C", "CC", "C1CC1", "CCCCCCCCCC(=O)OC", "CC(C)(C)C", "C#CC=O", "C1CCCCC1O"}) {
    const auto g = parse_smiles(s);
    const auto back = parse_smiles(write_smiles(g));
    CHECK(back.num_atoms() == g.num_atoms());
    CHECK(back.bonds.size() == g.bonds.size());
    CHECK(back.formula() == g.formula());
    // Canonical matrices agree (writer may renumber atoms).
    const auto ma = make_instance(s, {{1, 1.0}});
    const auto mb = make_instance(write_smiles(g), {{1, 1.0}});
    CHECK(ma.formula == mb.formula);
  }
}
