#include "mfgn/graph_build.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mfgn/error.hpp"
#include "mfgn/rng.hpp"

namespace mfgn {

SharingLevel sharing_level_from_string(const std::string& s) {
  if (s == "low") return SharingLevel::Low;
  if (s == "medium") return SharingLevel::Medium;
  if (s == "high") return SharingLevel::High;
  throw ConfigError("unknown sharing level: " + s + " (expected low|medium|high)");
}

std::string to_string(SharingLevel level) {
  switch (level) {
    case SharingLevel::Low: return "low";
    case SharingLevel::Medium: return "medium";
    case SharingLevel::High: return "high";
  }
  return "?";
}

void SharingPolicy::validate() const {
  if (k_clusters < 1) throw ConfigError("k_clusters must be >= 1");
  for (std::size_t i = 1; i < cluster_centers.size(); ++i)
    if (cluster_centers[i] <= cluster_centers[i - 1])
      throw ConfigError("cluster centers must be sorted ascending without duplicates");
}

namespace {

const char* element_symbol(Element e) {
  switch (e) {
    case Element::C: return "C";
    case Element::O: return "O";
    case Element::FakeH: return "Hx";
  }
  return "?";
}

}  // namespace

std::string sharing_key_b(const SharingPolicy& policy, int i, int j, Element ei, Element ej) {
  switch (policy.level_b) {
    case SharingLevel::Low: return "B";
    case SharingLevel::Medium: {
      // Unordered element pair.
      const char* a = element_symbol(ei);
      const char* b = element_symbol(ej);
      if (std::string(b) < a) std::swap(a, b);
      return std::string("B:") + a + "-" + b;
    }
    case SharingLevel::High: {
      const int lo = std::min(i, j), hi = std::max(i, j);
      return "B:" + std::to_string(lo) + "-" + std::to_string(hi);
    }
  }
  throw ConfigError("invalid sharing level");
}

int nearest_center(const std::vector<double>& centers, double value) {
  if (centers.empty()) throw ConfigError("no cluster centers fitted");
  int best = 0;
  double best_d = std::abs(value - centers[0]);
  for (int k = 1; k < static_cast<int>(centers.size()); ++k) {
    const double d = std::abs(value - centers[static_cast<std::size_t>(k)]);
    if (d < best_d) { // strict: ties keep the lower index
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::string sharing_key_c(const SharingPolicy& policy, int mz) {
  switch (policy.level_c) {
    case SharingLevel::Low: return "C";
    case SharingLevel::Medium:
      return "C:k" + std::to_string(nearest_center(policy.cluster_centers, mz));
    case SharingLevel::High: return "C:mz" + std::to_string(mz);
  }
  throw ConfigError("invalid sharing level");
}

std::vector<double> fit_peak_clusters(const std::vector<int>& mzs, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  std::set<int> distinct(mzs.begin(), mzs.end());
  if (static_cast<int>(distinct.size()) < k)
    throw ConfigError("fewer distinct m/z values (" + std::to_string(distinct.size()) +
                      ") than clusters (" + std::to_string(k) + ")");

  std::vector<double> pts(mzs.begin(), mzs.end());
  Rng rng(Rng::derive(seed, 0x6b6d65616e73ULL)); // stream tag for clustering

  // D^2-weighted seeding.
  std::vector<double> centers;
  centers.push_back(pts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pts.size()) - 1))]);
  while (static_cast<int>(centers.size()) < k) {
    std::vector<double> d2(pts.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (pts[i] - c) * (pts[i] - c));
      d2[i] = best;
      total += best;
    }
    double r = rng.next_double() * total;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
      pick = i;
    }
    centers.push_back(pts[pick]);
  }

  std::vector<int> assign(pts.size(), -1);
  for (int round = 0; round < 100; ++round) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int a = nearest_center(centers, pts[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed && round > 0) break;
    std::vector<double> sum(centers.size(), 0.0);
    std::vector<int> count(centers.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[static_cast<std::size_t>(assign[i])] += pts[i];
      ++count[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (count[c] > 0) centers[c] = sum[c] / count[c]; // empty clusters keep their center
    if (!changed) break;
  }

  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
  return centers;
}

int BuiltGraph::edge_slot_index(int i, int j) const {
  const int n = static_cast<int>(atom_vars.size());
  const int lo = std::min(i, j), hi = std::max(i, j);
  if (lo < 0 || hi >= n || lo == hi)
    throw ArgumentError("no edge slot for atom pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  // Row-major upper triangle.
  return lo * n - lo * (lo + 1) / 2 + (hi - lo - 1);
}

BuiltGraph build_graph(const MoleculeInstance& inst, const SharingPolicy& policy) {
  policy.validate();
  if (inst.peaks.empty()) throw ArgumentError("build_graph needs a nonempty peak list");
  const int n = inst.num_atoms();
  if (n < 2) throw ArgumentError("molecule must have at least two atoms");

  BuiltGraph bg;

  // Variables: atoms are observed (one-hot unary on the known element),
  // edges carry the 5-state bond domain, peaks are scalar evidence nodes.
  for (int i = 0; i < n; ++i) {
    const Element e = inst.atoms[static_cast<std::size_t>(i)].element;
    bg.atom_vars.push_back(
        bg.graph.add_variable(3, VarKind::Atom, DiscreteDistribution::one_hot(3, static_cast<int>(e))));
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      bg.edge_slots.emplace_back(i, j);
      bg.edge_vars.push_back(bg.graph.add_variable(5, VarKind::Edge));
    }
  for (std::size_t p = 0; p < inst.peaks.size(); ++p)
    bg.peak_vars.push_back(bg.graph.add_variable(1, VarKind::MassPeak));

  // Type A: one valence constraint per atom over all its incident edge slots.
  for (int i = 0; i < n; ++i) {
    const int v = inst.atoms[static_cast<std::size_t>(i)].valence;
    if (v > 4 * (n - 1))
      throw ValenceError("atom " + std::to_string(i) + " valence " + std::to_string(v) +
                         " cannot be met by " + std::to_string(n - 1) + " edges");
    std::vector<int> neighbors;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      neighbors.push_back(bg.edge_vars[static_cast<std::size_t>(bg.edge_slot_index(i, j))]);
    }
    bg.atom_factors.push_back(bg.graph.add_factor(
        neighbors, FactorKind::TypeA, ValencePayload{ValenceFactorSpec{v, 5, n - 1}}));
  }

  // Type B: (edge, atom_i, atom_j) per slot.
  for (std::size_t s = 0; s < bg.edge_slots.size(); ++s) {
    const auto [i, j] = bg.edge_slots[s];
    const std::string key = sharing_key_b(policy, i, j, inst.atoms[static_cast<std::size_t>(i)].element,
                                          inst.atoms[static_cast<std::size_t>(j)].element);
    const int f = bg.graph.add_factor(
        {bg.edge_vars[s], bg.atom_vars[static_cast<std::size_t>(i)], bg.atom_vars[static_cast<std::size_t>(j)]},
        FactorKind::TypeB, LowRankPayload{nullptr, key});
    bg.edge_factors.push_back(f);
    bg.factor_param_key[f] = key;
  }

  // Type C: (peak, all atoms) per spectrum peak.
  for (std::size_t p = 0; p < inst.peaks.size(); ++p) {
    const std::string key = sharing_key_c(policy, inst.peaks[p].mz);
    std::vector<int> neighbors = {bg.peak_vars[p]};
    neighbors.insert(neighbors.end(), bg.atom_vars.begin(), bg.atom_vars.end());
    const int f = bg.graph.add_factor(neighbors, FactorKind::TypeC, LowRankPayload{nullptr, key});
    bg.peak_factors.push_back(f);
    bg.factor_param_key[f] = key;
  }

  return bg;
}

}  // namespace mfgn
