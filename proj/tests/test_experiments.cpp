#include <doctest.h>

#include <cmath>
#include <set>

#include "mfgn/error.hpp"
#include "mfgn/experiments.hpp"

using namespace mfgn;

namespace {

DatasetSpec quick_spec(int count, std::uint64_t seed) {
  DatasetSpec spec;
  spec.molecule_count = count;
  spec.min_heavy = 4;
  spec.max_heavy = 8;
  spec.max_peaks = 6;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("generated molecules satisfy the chem invariants") {
  const auto dataset = generate_dataset(quick_spec(40, 3));
  REQUIRE(dataset.size() == 40);
  for (const auto& inst : dataset) {
    inst.validate(); // throws on violation
    CHECK_FALSE(inst.peaks.empty());
    CHECK(inst.num_heavy() >= 4);
    CHECK(inst.num_heavy() <= 8);
    // Ester anchor: C(=O)O in the first three positions.
    CHECK(inst.atoms[0].element == Element::C);
    CHECK(inst.atoms[1].element == Element::O);
    CHECK(inst.atoms[2].element == Element::O);
    CHECK(inst.bond_matrix[0][1] == 2);
    CHECK(inst.bond_matrix[0][2] == 1);
  }
}

TEST_CASE("generation is byte-identical for a fixed seed") {
  const auto a = dataset_to_jsonl(generate_dataset(quick_spec(12, 99)));
  const auto b = dataset_to_jsonl(generate_dataset(quick_spec(12, 99)));
  CHECK(a == b);
  const auto c = dataset_to_jsonl(generate_dataset(quick_spec(12, 100)));
  CHECK(a != c);
}

TEST_CASE("dataset JSONL round trip") {
  const auto dataset = generate_dataset(quick_spec(8, 5));
  const auto text = dataset_to_jsonl(dataset);
  const auto back = dataset_from_jsonl(text);
  REQUIRE(back.size() == dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    CHECK(back[i].smiles == dataset[i].smiles);
    CHECK(back[i].bond_matrix == dataset[i].bond_matrix);
    CHECK(back[i].peaks.size() == dataset[i].peaks.size());
  }
}

TEST_CASE("methyl decanoate fragments include the 155/31 acyl cut") {
  // Build the spectrum directly from the parsed molecule via the generator's
  // conventions: cutting the C(=O)-O single bond gives CH3O (31) and
  // C10H19O (155); cutting O-CH3 gives 15 and 171.
  const auto inst = make_instance("CCCCCCCCCC(=O)OC", {});
  (void)inst;
  DatasetSpec spec;
  (void)spec;

  // simulate via a one-off: reuse generate path through parse + spectrum
  // helpers is internal, so recompute with hand enumeration here.
  const auto g = parse_smiles("CCCCCCCCCC(=O)OC");
  std::set<int> masses;
  masses.insert(formula_mass(g.formula()));
  for (std::size_t cut = 0; cut < g.bonds.size(); ++cut) {
    if (g.bonds[cut].order != 1) continue;
    // Component search without the cut bond.
    std::vector<int> comp(static_cast<std::size_t>(g.num_atoms()), -1);
    int nc = 0;
    for (int s = 0; s < g.num_atoms(); ++s) {
      if (comp[static_cast<std::size_t>(s)] >= 0) continue;
      std::vector<int> stack = {s};
      comp[static_cast<std::size_t>(s)] = nc;
      while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
          if (bi == cut) continue;
          const auto& b = g.bonds[bi];
          int v = -1;
          if (b.a == u) v = b.b;
          if (b.b == u) v = b.a;
          if (v >= 0 && comp[static_cast<std::size_t>(v)] < 0) {
            comp[static_cast<std::size_t>(v)] = nc;
            stack.push_back(v);
          }
        }
      }
      ++nc;
    }
    std::vector<int> mass(static_cast<std::size_t>(nc), 0);
    for (int i = 0; i < g.num_atoms(); ++i)
      mass[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])] +=
          element_mass(g.elements[static_cast<std::size_t>(i)]) + g.implicit_h[static_cast<std::size_t>(i)];
    for (int c = 0; c < nc; ++c) masses.insert(mass[static_cast<std::size_t>(c)]);
  }
  CHECK(masses.count(186) == 1);
  CHECK(masses.count(155) == 1);
  CHECK(masses.count(31) == 1);
  CHECK(masses.count(15) == 1);
  CHECK(masses.count(171) == 1);
}

TEST_CASE("generated spectra contain the molecular ion") {
  const auto dataset = generate_dataset(quick_spec(10, 21));
  for (const auto& inst : dataset) {
    const int mol_mass = formula_mass(inst.formula);
    bool found = false;
    for (const auto& p : inst.peaks)
      if (p.mz == mol_mass) found = true;
    // The molecular ion may be truncated by max_peaks, but with 6 kept peaks
    // on small molecules it is normally present.
    if (inst.peaks.size() < 6) CHECK(found);
  }
}

TEST_CASE("perturb_onehot with tiny beta keeps the argmax") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const int cls = rep % 5;
    const auto d = perturb_onehot(cls, 5, 1e-4, rng);
    CHECK(d.argmax() == cls);
    CHECK(std::abs(d.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("expected true-class mass decreases with beta") {
  const int draws = 20000;
  double prev = 2.0;
  for (double beta : {0.2, 0.7, 1.5}) {
    Rng rng(11);
    double mass = 0.0;
    for (int i = 0; i < draws; ++i) mass += perturb_onehot(2, 5, beta, rng)[2];
    mass /= draws;
    CHECK(mass < prev);
    prev = mass;
  }
}

TEST_CASE("multiply decoding is a fixed point on clean one-hot evidence") {
  const auto dataset = generate_dataset(quick_spec(6, 31));
  NoiseConfig cfg;
  cfg.beta = 1e-9; // effectively one-hot input
  cfg.trials = 1;
  cfg.combination = DecodeCombination::Multiply;
  cfg.seed = 2;
  const auto m = noise_decode(dataset, cfg);
  CHECK(m.accuracy == doctest::Approx(1.0));
  CHECK(m.valence_rate == doctest::Approx(1.0));

  cfg.combination = DecodeCombination::Sum;
  const auto s = noise_decode(dataset, cfg);
  CHECK(s.accuracy == doctest::Approx(1.0));
}

TEST_CASE("noise decoding is reproducible bit for bit") {
  const auto dataset = generate_dataset(quick_spec(6, 37));
  NoiseConfig cfg;
  cfg.beta = 0.8;
  cfg.trials = 2;
  cfg.combination = DecodeCombination::Multiply;
  cfg.seed = 5;
  const auto a = noise_decode(dataset, cfg);
  const auto b = noise_decode(dataset, cfg);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.valence_rate == b.valence_rate);
}

TEST_CASE("decoding improves accuracy at moderate noise") {
  const auto dataset = generate_dataset(quick_spec(30, 41));
  NoiseConfig cfg;
  cfg.beta = 1.0;
  cfg.trials = 2;
  cfg.seed = 8;

  cfg.combination = DecodeCombination::Initial;
  const auto initial = noise_decode(dataset, cfg);
  cfg.combination = DecodeCombination::Multiply;
  const auto multiply = noise_decode(dataset, cfg);
  CHECK(multiply.accuracy > initial.accuracy);
}

TEST_CASE("spectrum text import") {
  const auto peaks = parse_spectrum_text("# header\n15 0.5\n31 1.0\n\n186 0.25 # molecular ion\n");
  REQUIRE(peaks.size() == 3);
  CHECK(peaks[0].mz == 15);
  CHECK(peaks[2].intensity == doctest::Approx(0.25));
  CHECK_THROWS_AS(parse_spectrum_text("15\n"), ParseError);
  CHECK_THROWS_AS(parse_spectrum_text("a b\n"), ParseError);
}

TEST_CASE("git blob sha1 matches the known vector") {
  CHECK(git_blob_sha1("hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("report json carries config echo, hash and rows") {
  const auto dataset = generate_dataset(quick_spec(4, 51));
  const auto rows = noise_decode_table(dataset, {0.5}, 1, 1, 3);
  REQUIRE(rows.size() == 3); // initial, sum, multiply
  const auto text = report_to_json("noise-decode", {{"beta", "0.5"}}, git_blob_sha1("x"), rows);
  CHECK(text.find("dataset_hash") != std::string::npos);
  CHECK(text.find("initial") != std::string::npos);
  CHECK(text.find("multiply") != std::string::npos);
}
