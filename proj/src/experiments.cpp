#include "mfgn/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mfgn/error.hpp"
#include "mfgn/valence.hpp"

namespace mfgn {

void DatasetSpec::validate() const {
  if (molecule_count < 1) throw ConfigError("molecule_count must be >= 1");
  if (min_heavy < 1 || max_heavy < min_heavy) throw ConfigError("invalid heavy-atom range");
  if (ester && max_heavy < 4) throw ConfigError("ester anchoring needs at least 4 heavy atoms");
  if (max_peaks < 1) throw ConfigError("max_peaks must be >= 1");
  if (ring_prob < 0 || ring_prob > 1 || double_bond_prob < 0 || double_bond_prob > 1 ||
      triple_bond_prob < 0 || triple_bond_prob > 1)
    throw ConfigError("probabilities must lie in [0, 1]");
}

namespace {

struct Skeleton {
  std::vector<Element> elements;
  std::vector<HeavyGraph::Bond> bonds;
  std::vector<int> free_valence;

  int add_atom(Element e) {
    elements.push_back(e);
    free_valence.push_back(element_valence(e));
    return static_cast<int>(elements.size()) - 1;
  }
  void add_bond(int a, int b, int order) {
    bonds.push_back({a, b, order});
    free_valence[static_cast<std::size_t>(a)] -= order;
    free_valence[static_cast<std::size_t>(b)] -= order;
  }
  bool adjacent(int a, int b) const {
    for (const auto& bd : bonds)
      if ((bd.a == a && bd.b == b) || (bd.a == b && bd.b == a)) return true;
    return false;
  }
};

// One attempt at a random skeleton; may come back short on atoms.
Skeleton grow_skeleton(Rng& rng, int n_heavy, const DatasetSpec& spec) {
  Skeleton sk;
  if (spec.ester) {
    const int c = sk.add_atom(Element::C);
    const int od = sk.add_atom(Element::O);
    const int os = sk.add_atom(Element::O);
    sk.add_bond(c, od, 2);
    sk.add_bond(c, os, 1);
  } else {
    sk.add_atom(rng.bernoulli(0.85) ? Element::C : Element::O);
  }

  while (static_cast<int>(sk.elements.size()) < n_heavy) {
    std::vector<int> hosts;
    for (int i = 0; i < static_cast<int>(sk.elements.size()); ++i)
      if (sk.free_valence[static_cast<std::size_t>(i)] >= 1) hosts.push_back(i);
    if (hosts.empty()) break;
    const int host = hosts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hosts.size()) - 1))];
    const Element elem = rng.bernoulli(0.85) ? Element::C : Element::O;
    const int atom = sk.add_atom(elem);

    int order = 1;
    const int host_free = sk.free_valence[static_cast<std::size_t>(host)];
    const int atom_free = element_valence(elem);
    if (elem == Element::C && sk.elements[static_cast<std::size_t>(host)] == Element::C) {
      if (host_free >= 3 && atom_free >= 3 && rng.bernoulli(spec.triple_bond_prob)) order = 3;
      else if (host_free >= 2 && atom_free >= 2 && rng.bernoulli(spec.double_bond_prob))
        order = 2;
    } else if (elem == Element::O && sk.elements[static_cast<std::size_t>(host)] == Element::C) {
      if (host_free >= 2 && rng.bernoulli(spec.double_bond_prob)) order = 2;
    }
    sk.add_bond(host, atom, order);
  }

  // Optional single ring.
  if (rng.bernoulli(spec.ring_prob)) {
    std::vector<std::pair<int, int>> candidates;
    for (int a = 0; a < static_cast<int>(sk.elements.size()); ++a)
      for (int b = a + 1; b < static_cast<int>(sk.elements.size()); ++b)
        if (sk.free_valence[static_cast<std::size_t>(a)] >= 1 &&
            sk.free_valence[static_cast<std::size_t>(b)] >= 1 && !sk.adjacent(a, b))
          candidates.emplace_back(a, b);
    if (!candidates.empty()) {
      const auto [a, b] =
          candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
      sk.add_bond(a, b, 1);
    }
  }
  return sk;
}

// Fragment masses from cutting every single bond: connected-component
// nominal masses including each component's implicit hydrogens.
std::vector<Peak> simulate_spectrum(const HeavyGraph& g, int max_peaks) {
  const int n = g.num_atoms();
  std::map<int, int> counts;
  counts[formula_mass(g.formula())] += 1; // molecular ion

  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n)); // (neighbor, bond idx)
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    adj[static_cast<std::size_t>(g.bonds[bi].a)].emplace_back(g.bonds[bi].b, static_cast<int>(bi));
    adj[static_cast<std::size_t>(g.bonds[bi].b)].emplace_back(g.bonds[bi].a, static_cast<int>(bi));
  }

  for (std::size_t cut = 0; cut < g.bonds.size(); ++cut) {
    if (g.bonds[cut].order != 1) continue;
    std::vector<int> comp(static_cast<std::size_t>(n), -1);
    int n_comp = 0;
    for (int start = 0; start < n; ++start) {
      if (comp[static_cast<std::size_t>(start)] >= 0) continue;
      std::vector<int> stack = {start};
      comp[static_cast<std::size_t>(start)] = n_comp;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (const auto& [v, bi] : adj[static_cast<std::size_t>(u)]) {
          if (bi == static_cast<int>(cut)) continue;
          if (comp[static_cast<std::size_t>(v)] < 0) {
            comp[static_cast<std::size_t>(v)] = n_comp;
            stack.push_back(v);
          }
        }
      }
      ++n_comp;
    }
    std::vector<int> mass(static_cast<std::size_t>(n_comp), 0);
    for (int i = 0; i < n; ++i)
      mass[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])] +=
          element_mass(g.elements[static_cast<std::size_t>(i)]) + g.implicit_h[static_cast<std::size_t>(i)];
    for (int c = 0; c < n_comp; ++c) counts[mass[static_cast<std::size_t>(c)]] += 1;
  }

  int max_count = 0;
  for (const auto& [mz, c] : counts) max_count = std::max(max_count, c);
  std::vector<Peak> peaks;
  for (const auto& [mz, c] : counts)
    peaks.push_back({mz, static_cast<double>(c) / max_count});

  if (static_cast<int>(peaks.size()) > max_peaks) {
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
      if (a.intensity != b.intensity) return a.intensity > b.intensity;
      return a.mz < b.mz;
    });
    peaks.resize(static_cast<std::size_t>(max_peaks));
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
  return peaks;
}

}  // namespace

std::vector<MoleculeInstance> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<MoleculeInstance> out;
  out.reserve(static_cast<std::size_t>(spec.molecule_count));

  for (int idx = 0; idx < spec.molecule_count; ++idx) {
    Rng rng(Rng::derive(spec.seed, 0x67656eULL, static_cast<std::uint64_t>(idx)));
    MoleculeInstance inst;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      const int lo = spec.ester ? std::max(spec.min_heavy, 4) : spec.min_heavy;
      const int n_heavy = static_cast<int>(rng.uniform_int(lo, spec.max_heavy));
      Skeleton sk = grow_skeleton(rng, n_heavy, spec);
      if (static_cast<int>(sk.elements.size()) != n_heavy) continue;

      HeavyGraph g;
      g.elements = sk.elements;
      g.bonds = sk.bonds;
      g.implicit_h.assign(sk.elements.size(), 0);
      for (std::size_t i = 0; i < sk.elements.size(); ++i)
        g.implicit_h[i] = sk.free_valence[i];

      const std::string smiles = write_smiles(g);
      const HeavyGraph reparsed = parse_smiles(smiles);
      inst = make_instance(smiles, simulate_spectrum(reparsed, spec.max_peaks));
      ok = true;
    }
    if (!ok)
      throw ConfigError("dataset generation failed; spec too restrictive (molecule " +
                        std::to_string(idx) + ")");
    out.push_back(std::move(inst));
  }
  return out;
}

std::string dataset_to_jsonl(const std::vector<MoleculeInstance>& dataset) {
  std::string out;
  for (const auto& inst : dataset) {
    nlohmann::json j;
    j["smiles"] = inst.smiles;
    j["formula"] = inst.formula;
    nlohmann::json peaks = nlohmann::json::array();
    for (const auto& p : inst.peaks) peaks.push_back({p.mz, p.intensity});
    j["peaks"] = std::move(peaks);
    j["matrix"] = label_matrix(inst);
    j["n_atoms"] = inst.num_atoms();
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<MoleculeInstance> dataset_from_jsonl(const std::string& text) {
  std::vector<MoleculeInstance> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    std::vector<Peak> peaks;
    for (const auto& p : j.at("peaks")) peaks.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
    MoleculeInstance inst = make_instance(j.at("smiles").get<std::string>(), std::move(peaks));
    // The stored matrix is the source of truth for labels; make sure it
    // matches the instance rebuilt from SMILES.
    const auto labels = j.at("matrix").get<std::vector<int>>();
    if (labels != label_matrix(inst))
      throw ConfigError("dataset line " + std::to_string(line_no) +
                        ": stored matrix disagrees with the parsed SMILES");
    if (j.at("n_atoms").get<int>() != inst.num_atoms())
      throw ConfigError("dataset line " + std::to_string(line_no) + ": n_atoms mismatch");
    out.push_back(std::move(inst));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<MoleculeInstance>& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open dataset file for writing: " + path);
  out << dataset_to_jsonl(dataset);
}

std::vector<MoleculeInstance> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return dataset_from_jsonl(ss.str());
}

std::vector<Peak> parse_spectrum_text(const std::string& text) {
  std::vector<Peak> peaks;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    int mz;
    double intensity;
    if (!(ls >> mz)) {
      std::string rest;
      if (ls.clear(), ls >> rest) throw ParseError("bad spectrum line " + std::to_string(line_no), line_no);
      continue; // blank or comment-only line
    }
    if (!(ls >> intensity)) throw ParseError("missing intensity on line " + std::to_string(line_no), line_no);
    std::string extra;
    if (ls >> extra) throw ParseError("trailing content on line " + std::to_string(line_no), line_no);
    peaks.push_back({mz, intensity});
  }
  return peaks;
}

DiscreteDistribution perturb_onehot(int cls, int domain, double beta, Rng& rng) {
  if (cls < 0 || cls >= domain) throw ArgumentError("class out of range");
  if (beta <= 0.0) throw ArgumentError("beta must be positive");
  std::vector<double> v(static_cast<std::size_t>(domain));
  for (int i = 0; i < domain; ++i) v[static_cast<std::size_t>(i)] = (i == cls ? 1.0 : 0.0) + rng.exponential(beta);
  DiscreteDistribution d(std::move(v));
  d.normalize();
  return d;
}

DecodeCombination decode_combination_from_string(const std::string& s) {
  if (s == "initial" || s == "none") return DecodeCombination::Initial;
  if (s == "sum") return DecodeCombination::Sum;
  if (s == "multiply") return DecodeCombination::Multiply;
  throw ConfigError("unknown combination: " + s + " (expected initial|sum|multiply)");
}

std::string to_string(DecodeCombination c) {
  switch (c) {
    case DecodeCombination::Initial: return "initial";
    case DecodeCombination::Sum: return "sum";
    case DecodeCombination::Multiply: return "multiply";
  }
  return "?";
}

void NoiseConfig::validate() const {
  if (beta <= 0.0) throw ConfigError("beta must be positive");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (decode_rounds < 1) throw ConfigError("decode_rounds must be >= 1");
}

DecodeMetrics noise_decode(const std::vector<MoleculeInstance>& dataset, const NoiseConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ArgumentError("empty dataset");

  double acc_sum = 0.0;
  long mol_count = 0;
  long atoms_total = 0, atoms_ok = 0;

  for (int trial = 0; trial < cfg.trials; ++trial) {
    for (std::size_t mi = 0; mi < dataset.size(); ++mi) {
      const MoleculeInstance& inst = dataset[mi];
      const int n = inst.num_atoms();
      const int m = n * (n - 1) / 2;
      Rng rng(Rng::derive(cfg.seed, mi + 1, static_cast<std::uint64_t>(trial) + 1));

      auto slot_of = [&](int i, int j) {
        const int lo = std::min(i, j), hi = std::max(i, j);
        return lo * n - lo * (lo + 1) / 2 + (hi - lo - 1);
      };

      std::vector<DiscreteDistribution> belief;
      belief.reserve(static_cast<std::size_t>(m));
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          belief.push_back(perturb_onehot(
              inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 5, cfg.beta, rng));

      if (cfg.combination != DecodeCombination::Initial) {
        for (int round = 0; round < cfg.decode_rounds; ++round) {
          // Valence messages from every atom's factor to its incident edges.
          std::vector<ValenceMessages> atom_msgs(static_cast<std::size_t>(n));
          for (int i = 0; i < n; ++i) {
            std::vector<DiscreteDistribution> incoming;
            incoming.reserve(static_cast<std::size_t>(n) - 1);
            for (int j = 0; j < n; ++j) {
              if (j == i) continue;
              incoming.push_back(belief[static_cast<std::size_t>(slot_of(i, j))]);
            }
            atom_msgs[static_cast<std::size_t>(i)] = valence_messages(
                ValenceFactorSpec{inst.atoms[static_cast<std::size_t>(i)].valence, 5, n - 1}, incoming);
          }
          auto msg_to_edge = [&](int from_atom, int other) -> const DiscreteDistribution& {
            // Slot of `other` within from_atom's incoming list (j ascending, skipping from_atom).
            const int slot = other - (other > from_atom ? 1 : 0);
            return atom_msgs[static_cast<std::size_t>(from_atom)].messages[static_cast<std::size_t>(slot)];
          };
          std::vector<DiscreteDistribution> next(static_cast<std::size_t>(m));
          for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
              const int s = slot_of(i, j);
              const auto& mi_msg = msg_to_edge(i, j);
              const auto& mj_msg = msg_to_edge(j, i);
              // Sum aggregates the incoming factor messages, Multiply takes
              // their product; either way the belief enters multiplicatively
              // as in the belief update equation.
              DiscreteDistribution combined(std::vector<double>(5, 0.0));
              if (cfg.combination == DecodeCombination::Sum) {
                for (int x = 0; x < 5; ++x)
                  combined[x] = belief[static_cast<std::size_t>(s)][x] * (mi_msg[x] + mj_msg[x]);
              } else {
                for (int x = 0; x < 5; ++x)
                  combined[x] = belief[static_cast<std::size_t>(s)][x] * mi_msg[x] * mj_msg[x];
              }
              if (combined.sum() <= 0.0) combined = DiscreteDistribution::uniform(5);
              else
                combined.normalize();
              next[static_cast<std::size_t>(s)] = std::move(combined);
            }
          belief = std::move(next);
        }
      }

      int correct = 0;
      std::vector<int> row_sum(static_cast<std::size_t>(n), 0);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          const int s = slot_of(i, j);
          const int pred = belief[static_cast<std::size_t>(s)].argmax();
          if (pred == inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) ++correct;
          row_sum[static_cast<std::size_t>(i)] += pred;
          row_sum[static_cast<std::size_t>(j)] += pred;
        }
      acc_sum += static_cast<double>(correct) / m;
      ++mol_count;
      for (int i = 0; i < n; ++i) {
        ++atoms_total;
        if (row_sum[static_cast<std::size_t>(i)] == inst.atoms[static_cast<std::size_t>(i)].valence) ++atoms_ok;
      }
    }
  }
  return {acc_sum / mol_count, static_cast<double>(atoms_ok) / atoms_total};
}

std::vector<NoiseReportRow> noise_decode_table(const std::vector<MoleculeInstance>& dataset,
                                               const std::vector<double>& betas, int trials,
                                               int decode_rounds, std::uint64_t seed) {
  std::vector<NoiseReportRow> rows;
  for (double beta : betas) {
    for (DecodeCombination c :
         {DecodeCombination::Initial, DecodeCombination::Sum, DecodeCombination::Multiply}) {
      NoiseConfig cfg;
      cfg.beta = beta;
      cfg.trials = trials;
      cfg.decode_rounds = decode_rounds;
      cfg.combination = c;
      cfg.seed = seed;
      const DecodeMetrics m = noise_decode(dataset, cfg);
      rows.push_back({beta, to_string(c), m.accuracy, m.valence_rate});
    }
  }
  return rows;
}

std::vector<AblationRow> run_ablations(std::map<std::string, Model*> models,
                                       const std::vector<MoleculeInstance>& test) {
  if (models.count("medium") == 0) throw ArgumentError("run_ablations needs a 'medium' model");
  std::vector<AblationRow> rows;
  for (const char* name : {"low", "medium", "high"}) {
    auto it = models.find(name);
    if (it == models.end()) continue;
    rows.push_back({std::string("fgmn-") + name, evaluate(*it->second, test)});
  }
  AblationFlags no_a;
  no_a.drop_valence = true;
  rows.push_back({"medium-no-type-a", evaluate(*models.at("medium"), test, no_a)});
  AblationFlags no_bc;
  no_bc.drop_bc = true;
  rows.push_back({"medium-no-type-bc", evaluate(*models.at("medium"), test, no_bc)});
  return rows;
}

namespace {

// Compact SHA-1; sufficient for content hashes over dataset files.
class Sha1 {
 public:
  void update(const unsigned char* data, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) {
      buffer_[buffer_len_++] = data[i];
      ++total_;
      if (buffer_len_ == 64) {
        process_block();
        buffer_len_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0x00;
    while (buffer_len_ != 56) update(&zero, 1);
    for (int i = 7; i >= 0; --i) {
      unsigned char b = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
      update(&b, 1);
    }
    static const char* hexc = "0123456789abcdef";
    std::string out;
    for (std::uint32_t word : h_) {
      for (int i = 3; i >= 0; --i) {
        const unsigned char b = static_cast<unsigned char>((word >> (8 * i)) & 0xff);
        out += hexc[b >> 4];
        out += hexc[b & 0xf];
      }
    }
    return out;
  }

 private:
  static std::uint32_t rol(std::uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

  void process_block() {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (static_cast<std::uint32_t>(buffer_[4 * i]) << 24) |
             (static_cast<std::uint32_t>(buffer_[4 * i + 1]) << 16) |
             (static_cast<std::uint32_t>(buffer_[4 * i + 2]) << 8) |
             static_cast<std::uint32_t>(buffer_[4 * i + 3]);
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | ((~b) & d);
        k = 0x5a827999;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ed9eba1;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8f1bbcdc;
      } else {
        f = b ^ c ^ d;
        k = 0xca62c1d6;
      }
      const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::array<std::uint32_t, 5> h_ = {0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476, 0xc3d2e1f0};
  unsigned char buffer_[64];
  std::size_t buffer_len_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace

std::string git_blob_sha1(const std::string& content) {
  Sha1 sha;
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  sha.update(reinterpret_cast<const unsigned char*>(header.data()), header.size());
  sha.update(reinterpret_cast<const unsigned char*>(content.data()), content.size());
  return sha.hex_digest();
}

std::string report_to_json(const std::string& kind, const std::map<std::string, std::string>& config_echo,
                           const std::string& dataset_hash, const std::vector<NoiseReportRow>& rows) {
  nlohmann::json j;
  j["kind"] = kind;
  j["config"] = config_echo;
  j["dataset_hash"] = dataset_hash;
  nlohmann::json out_rows = nlohmann::json::array();
  for (const auto& r : rows)
    out_rows.push_back({{"beta", r.beta},
                        {"combination", r.combination},
                        {"accuracy", r.accuracy},
                        {"valence_rate", r.valence_rate}});
  j["rows"] = std::move(out_rows);
  return j.dump(2);
}

std::string ablation_report_to_json(const std::map<std::string, std::string>& config_echo,
                                    const std::string& dataset_hash, const std::vector<AblationRow>& rows) {
  nlohmann::json j;
  j["kind"] = "ablation-report";
  j["config"] = config_echo;
  j["dataset_hash"] = dataset_hash;
  nlohmann::json out_rows = nlohmann::json::array();
  for (const auto& r : rows)
    out_rows.push_back({{"name", r.name},
                        {"loss", r.metrics.loss},
                        {"accuracy", r.metrics.accuracy},
                        {"accuracy_heavy", r.metrics.accuracy_heavy},
                        {"valence_rate", r.metrics.valence_rate}});
  j["rows"] = std::move(out_rows);
  return j.dump(2);
}

}  // namespace mfgn
