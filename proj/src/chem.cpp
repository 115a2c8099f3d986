#include "mfgn/chem.hpp"

#include <algorithm>
#include <array>
#include <functional>

#include "mfgn/error.hpp"

namespace mfgn {

int element_valence(Element e) {
  switch (e) {
    case Element::C: return 4;
    case Element::O: return 2;
    case Element::FakeH: return 1;
  }
  throw ArgumentError("unknown element");
}

int element_mass(Element e) {
  switch (e) {
    case Element::C: return 12;
    case Element::O: return 16;
    case Element::FakeH: return 1;
  }
  throw ArgumentError("unknown element");
}

int HeavyGraph::total_hydrogens() const {
  int h = 0;
  for (int x : implicit_h) h += x;
  return h;
}

std::map<std::string, int> HeavyGraph::formula() const {
  std::map<std::string, int> f;
  for (Element e : elements) {
    if (e == Element::C) ++f["C"];
    else if (e == Element::O) ++f["O"];
  }
  const int h = total_hydrogens();
  if (h > 0) f["H"] = h;
  return f;
}

HeavyGraph parse_smiles(const std::string& text) {
  if (text.empty()) throw ParseError("empty SMILES string", 0);

  HeavyGraph g;
  std::vector<std::vector<int>> bond_order; // running adjacency to reject duplicates
  int prev = -1;
  int pending = 0; // 0 = unspecified (single), 2 = '=', 3 = '#'
  std::vector<int> branch_stack;
  struct RingEntry {
    int atom = -1;
    int order = 0;
  };
  std::array<RingEntry, 10> rings;

  auto add_atom = [&](Element e) {
    g.elements.push_back(e);
    for (auto& row : bond_order) row.push_back(0);
    bond_order.emplace_back(g.elements.size(), 0);
    return static_cast<int>(g.elements.size()) - 1;
  };
  auto add_bond = [&](int a, int b, int order, std::size_t pos) {
    if (a == b) throw ParseError("ring closure bonds an atom to itself", pos);
    if (bond_order[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] != 0)
      throw ParseError("duplicate bond between the same atom pair", pos);
    bond_order[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = order;
    bond_order[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = order;
    g.bonds.push_back({a, b, order});
  };

  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (c == 'C' || c == 'O') {
      const int atom = add_atom(c == 'C' ? Element::C : Element::O);
      if (prev >= 0) add_bond(prev, atom, pending == 0 ? 1 : pending, pos);
      else if (pending != 0)
        throw ParseError("bond symbol with no preceding atom", pos);
      pending = 0;
      prev = atom;
    } else if (c == '=' || c == '#') {
      if (pending != 0) throw ParseError("two consecutive bond symbols", pos);
      pending = (c == '=') ? 2 : 3;
    } else if (c == '(') {
      if (prev < 0) throw ParseError("branch opened before any atom", pos);
      if (pending != 0) throw ParseError("bond symbol before '('", pos);
      branch_stack.push_back(prev);
    } else if (c == ')') {
      if (branch_stack.empty()) throw ParseError("unmatched ')'", pos);
      if (pending != 0) throw ParseError("bond symbol before ')'", pos);
      prev = branch_stack.back();
      branch_stack.pop_back();
    } else if (c >= '1' && c <= '9') {
      if (prev < 0) throw ParseError("ring-closure digit before any atom", pos);
      auto& entry = rings[static_cast<std::size_t>(c - '0')];
      if (entry.atom < 0) {
        entry.atom = prev;
        entry.order = pending;
        pending = 0;
      } else {
        int order = 1;
        if (entry.order != 0 && pending != 0 && entry.order != pending)
          throw ParseError("ring closure bond orders disagree", pos);
        if (entry.order != 0) order = entry.order;
        else if (pending != 0)
          order = pending;
        add_bond(entry.atom, prev, order, pos);
        entry = RingEntry{};
        pending = 0;
      }
    } else {
      throw ParseError(std::string("unsupported character '") + c + "'", pos);
    }
  }
  if (pending != 0) throw ParseError("dangling bond symbol at end of input", text.size());
  if (!branch_stack.empty()) throw ParseError("unclosed branch", text.size());
  for (std::size_t d = 1; d < rings.size(); ++d)
    if (rings[d].atom >= 0)
      throw ParseError("unclosed ring digit " + std::to_string(d), text.size());

  g.implicit_h.resize(g.elements.size());
  for (int i = 0; i < g.num_atoms(); ++i) {
    int used = 0;
    for (const auto& b : g.bonds)
      if (b.a == i || b.b == i) used += b.order;
    const int h = element_valence(g.elements[static_cast<std::size_t>(i)]) - used;
    if (h < 0)
      throw ValenceError("atom " + std::to_string(i) + " exceeds its valence (bond order sum " +
                         std::to_string(used) + ")");
    g.implicit_h[static_cast<std::size_t>(i)] = h;
  }
  return g;
}

std::string write_smiles(const HeavyGraph& g) {
  const int n = g.num_atoms();
  if (n == 0) throw ArgumentError("cannot write an empty molecule");

  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n)); // (neighbor, order)
  for (const auto& b : g.bonds) {
    adj[static_cast<std::size_t>(b.a)].emplace_back(b.b, b.order);
    adj[static_cast<std::size_t>(b.b)].emplace_back(b.a, b.order);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());

  // Spanning tree by DFS; leftover bonds become ring closures.
  std::vector<int> parent(static_cast<std::size_t>(n), -2);
  std::vector<std::vector<std::pair<int, int>>> children(static_cast<std::size_t>(n));
  std::vector<HeavyGraph::Bond> ring_bonds;
  std::vector<int> order_stack = {0};
  parent[0] = -1;
  std::vector<std::pair<int, int>> seen_ring; // (a, b) pairs already recorded
  while (!order_stack.empty()) {
    const int u = order_stack.back();
    order_stack.pop_back();
    for (auto it = adj[static_cast<std::size_t>(u)].rbegin(); it != adj[static_cast<std::size_t>(u)].rend(); ++it) {
      const auto [v, order] = *it;
      if (parent[static_cast<std::size_t>(v)] == -2) {
        parent[static_cast<std::size_t>(v)] = u;
        children[static_cast<std::size_t>(u)].emplace_back(v, order);
        order_stack.push_back(v);
      } else if (v != parent[static_cast<std::size_t>(u)]) {
        const auto key = std::minmax(u, v);
        if (std::find(seen_ring.begin(), seen_ring.end(), std::pair<int, int>(key.first, key.second)) ==
            seen_ring.end()) {
          seen_ring.emplace_back(key.first, key.second);
          ring_bonds.push_back({key.first, key.second, order});
        }
      }
    }
  }
  for (int v = 0; v < n; ++v)
    if (parent[static_cast<std::size_t>(v)] == -2)
      throw ArgumentError("molecule graph is disconnected");
  for (auto& c : children) std::sort(c.begin(), c.end());

  // Assign ring digits per endpoint.
  std::vector<std::vector<std::pair<int, int>>> ring_marks(static_cast<std::size_t>(n)); // (digit, order)
  int next_digit = 1;
  for (const auto& b : ring_bonds) {
    if (next_digit > 9) throw CapacityError("more than 9 simultaneous ring closures");
    ring_marks[static_cast<std::size_t>(b.a)].emplace_back(next_digit, b.order);
    ring_marks[static_cast<std::size_t>(b.b)].emplace_back(next_digit, b.order);
    ++next_digit;
  }

  std::string out;
  auto bond_symbol = [](int order) -> std::string {
    if (order == 2) return "=";
    if (order == 3) return "#";
    return "";
  };
  std::function<void(int)> emit = [&](int u) {
    out += (g.elements[static_cast<std::size_t>(u)] == Element::C) ? 'C' : 'O';
    for (const auto& [digit, order] : ring_marks[static_cast<std::size_t>(u)]) {
      out += bond_symbol(order);
      out += static_cast<char>('0' + digit);
    }
    const auto& kids = children[static_cast<std::size_t>(u)];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const bool last = (k + 1 == kids.size());
      if (!last) out += '(';
      out += bond_symbol(kids[k].second);
      emit(kids[k].first);
      if (!last) out += ')';
    }
  };
  emit(0);
  return out;
}

int formula_mass(const std::map<std::string, int>& formula) {
  int mass = 0;
  for (const auto& [sym, count] : formula) {
    if (count < 0) throw ArgumentError("negative element count");
    int m = 0;
    if (sym == "C") m = 12;
    else if (sym == "H") m = 1;
    else if (sym == "O") m = 16;
    else
      throw ArgumentError("unknown element symbol: " + sym);
    mass += count * m;
  }
  return mass;
}

CollapsedMolecule collapse_hydrogens(const HeavyGraph& g) {
  const int n_heavy = g.num_atoms();
  const int n = n_heavy + 1;
  CollapsedMolecule mol;
  mol.atoms.resize(static_cast<std::size_t>(n));
  mol.bonds.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));

  for (int i = 0; i < n_heavy; ++i) {
    Atom& a = mol.atoms[static_cast<std::size_t>(i)];
    a.element = g.elements[static_cast<std::size_t>(i)];
    a.nominal_mass = element_mass(a.element);
    a.valence = element_valence(a.element);
    a.index = i;
  }
  Atom& fake = mol.atoms[static_cast<std::size_t>(n_heavy)];
  fake.element = Element::FakeH;
  fake.nominal_mass = 1;
  fake.valence = g.total_hydrogens();
  fake.index = n_heavy;

  for (const auto& b : g.bonds) {
    mol.bonds[static_cast<std::size_t>(b.a)][static_cast<std::size_t>(b.b)] = b.order;
    mol.bonds[static_cast<std::size_t>(b.b)][static_cast<std::size_t>(b.a)] = b.order;
  }
  for (int i = 0; i < n_heavy; ++i) {
    const int h = g.implicit_h[static_cast<std::size_t>(i)];
    if (h > 4)
      throw ValenceError("atom " + std::to_string(i) + " has " + std::to_string(h) +
                         " implicit hydrogens; edge domain caps at 4");
    if (h > 0) {
      mol.bonds[static_cast<std::size_t>(i)][static_cast<std::size_t>(n_heavy)] = h;
      mol.bonds[static_cast<std::size_t>(n_heavy)][static_cast<std::size_t>(i)] = h;
    }
  }
  return mol;
}

namespace {

// First ester match (smallest carbon index, then smallest oxygen indices):
// a carbon double-bonded to one oxygen and single-bonded to another.
struct EsterMatch {
  int carbon = -1, carbonyl_o = -1, ester_o = -1;
  bool found() const { return carbon >= 0; }
};

EsterMatch find_ester(const CollapsedMolecule& mol) {
  const int n = mol.num_atoms();
  for (int c = 0; c < n; ++c) {
    if (mol.atoms[static_cast<std::size_t>(c)].element != Element::C) continue;
    int od = -1, os = -1;
    for (int o = 0; o < n; ++o) {
      if (mol.atoms[static_cast<std::size_t>(o)].element != Element::O) continue;
      const int order = mol.bonds[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      if (order == 2 && od < 0) od = o;
      if (order == 1 && os < 0) os = o;
    }
    if (od >= 0 && os >= 0) return {c, od, os};
  }
  return {};
}

}  // namespace

std::vector<int> canonical_order(const CollapsedMolecule& mol, bool anchor_ester) {
  const int n = mol.num_atoms();
  EsterMatch ester;
  if (anchor_ester) ester = find_ester(mol);

  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  auto is_anchor = [&](int i) {
    return ester.found() && (i == ester.carbon || i == ester.carbonyl_o || i == ester.ester_o);
  };
  if (ester.found()) {
    order.push_back(ester.carbon);
    order.push_back(ester.carbonyl_o);
    order.push_back(ester.ester_o);
  }
  for (int i = 0; i < n; ++i)
    if (mol.atoms[static_cast<std::size_t>(i)].element == Element::C && !is_anchor(i)) order.push_back(i);
  for (int i = 0; i < n; ++i)
    if (mol.atoms[static_cast<std::size_t>(i)].element == Element::O && !is_anchor(i)) order.push_back(i);
  for (int i = 0; i < n; ++i)
    if (mol.atoms[static_cast<std::size_t>(i)].element == Element::FakeH) order.push_back(i);
  return order;
}

int MoleculeInstance::num_heavy() const {
  int k = 0;
  for (const auto& a : atoms)
    if (a.element != Element::FakeH) ++k;
  return k;
}

void MoleculeInstance::validate() const {
  const int n = num_atoms();
  if (static_cast<int>(bond_matrix.size()) != n) throw ArgumentError("bond matrix size mismatch");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(bond_matrix[static_cast<std::size_t>(i)].size()) != n)
      throw ArgumentError("bond matrix row size mismatch");
    if (bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] != 0)
      throw ValenceError("bond matrix diagonal must be zero");
    int row = 0;
    for (int j = 0; j < n; ++j) {
      const int x = bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (x < 0 || x > 4) throw ValenceError("bond multiplicity out of range 0..4");
      if (x != bond_matrix[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)])
        throw ValenceError("bond matrix must be symmetric");
      row += x;
    }
    if (row != atoms[static_cast<std::size_t>(i)].valence)
      throw ValenceError("atom " + std::to_string(i) + " row sum " + std::to_string(row) +
                         " does not match valence " +
                         std::to_string(atoms[static_cast<std::size_t>(i)].valence));
  }
}

MoleculeInstance make_instance(const std::string& smiles, std::vector<Peak> peaks, bool anchor_ester) {
  const HeavyGraph g = parse_smiles(smiles);
  const CollapsedMolecule mol = collapse_hydrogens(g);
  const std::vector<int> order = canonical_order(mol, anchor_ester);
  const int n = mol.num_atoms();

  MoleculeInstance inst;
  inst.formula = g.formula();
  inst.smiles = smiles;
  inst.peaks = std::move(peaks);
  inst.atoms.resize(static_cast<std::size_t>(n));
  inst.bond_matrix.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  for (int p = 0; p < n; ++p) {
    inst.atoms[static_cast<std::size_t>(p)] = mol.atoms[static_cast<std::size_t>(order[static_cast<std::size_t>(p)])];
    inst.atoms[static_cast<std::size_t>(p)].index = p;
  }
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q)
      inst.bond_matrix[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] =
          mol.bonds[static_cast<std::size_t>(order[static_cast<std::size_t>(p)])]
                   [static_cast<std::size_t>(order[static_cast<std::size_t>(q)])];
  inst.validate();
  return inst;
}

std::vector<int> upper_triangle(const std::vector<std::vector<int>>& matrix) {
  const int n = static_cast<int>(matrix.size());
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) labels.push_back(matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  return labels;
}

std::vector<int> label_matrix(const MoleculeInstance& inst) { return upper_triangle(inst.bond_matrix); }

std::vector<std::vector<int>> matrix_from_labels(const std::vector<int>& labels, int n) {
  if (static_cast<int>(labels.size()) != n * (n - 1) / 2)
    throw ArgumentError("label count does not match n(n-1)/2");
  std::vector<std::vector<int>> m(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  std::size_t k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = labels[k];
      m[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = labels[k];
      ++k;
    }
  return m;
}

}  // namespace mfgn
