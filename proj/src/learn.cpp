#include "mfgn/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mfgn/error.hpp"
#include "mfgn/rng.hpp"

namespace mfgn {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
}

std::vector<std::vector<int>> element_blocks(const MoleculeInstance& inst) {
  std::vector<int> c, o, fake;
  for (int i = 0; i < inst.num_atoms(); ++i) {
    switch (inst.atoms[static_cast<std::size_t>(i)].element) {
      case Element::C: c.push_back(i); break;
      case Element::O: o.push_back(i); break;
      case Element::FakeH: fake.push_back(i); break;
    }
  }
  std::vector<std::vector<int>> blocks;
  if (!c.empty()) blocks.push_back(std::move(c));
  if (!o.empty()) blocks.push_back(std::move(o));
  if (!fake.empty()) blocks.push_back(std::move(fake));
  return blocks;
}

namespace {

int slot_index(int n, int i, int j) {
  const int lo = std::min(i, j), hi = std::max(i, j);
  return lo * n - lo * (lo + 1) / 2 + (hi - lo - 1);
}

// Per-slot log-softmax rows, computed once per loss evaluation.
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const double mx = logits.row(s).maxCoeff();
    const double lse = std::log((logits.row(s).array() - mx).exp().sum()) + mx;
    out.row(s) = logits.row(s).array() - lse;
  }
  return out;
}

double perm_loss_from_logp(const Eigen::MatrixXd& logp, const MoleculeInstance& inst,
                           const std::vector<int>& perm) {
  const int n = inst.num_atoms();
  const int m = n * (n - 1) / 2;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int slot = slot_index(n, perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      const int label = inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      acc -= logp(slot, label);
    }
  return acc / m;
}

double factorial_capped(int k, double cap) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) {
    f *= i;
    if (f > cap) return f;
  }
  return f;
}

}  // namespace

PermutationLoss permutation_min_loss(const Eigen::MatrixXd& logits, const MoleculeInstance& inst,
                                     double perm_cap) {
  const int n = inst.num_atoms();
  if (logits.rows() != n * (n - 1) / 2 || logits.cols() != 5)
    throw ArgumentError("logits must be (n(n-1)/2) x 5");

  const Eigen::MatrixXd logp = log_softmax_rows(logits);
  const auto blocks = element_blocks(inst);

  std::vector<int> identity(static_cast<std::size_t>(n));
  std::iota(identity.begin(), identity.end(), 0);

  PermutationLoss best;
  best.permutation = identity;
  best.loss = perm_loss_from_logp(logp, inst, identity);

  double combos = 1.0;
  for (const auto& b : blocks) combos *= factorial_capped(static_cast<int>(b.size()), perm_cap + 1);

  if (combos <= perm_cap) {
    // Exhaustive: compose per-block permutations.
    std::vector<std::vector<int>> block_perm(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) block_perm[b] = blocks[b];

    std::vector<int> perm = identity;
    std::function<void(std::size_t)> rec = [&](std::size_t b) {
      if (b == blocks.size()) {
        const double loss = perm_loss_from_logp(logp, inst, perm);
        if (loss < best.loss) {
          best.loss = loss;
          best.permutation = perm;
        }
        return;
      }
      std::vector<int> arrangement = blocks[b];
      std::sort(arrangement.begin(), arrangement.end());
      do {
        for (std::size_t pos = 0; pos < blocks[b].size(); ++pos)
          perm[static_cast<std::size_t>(blocks[b][pos])] = arrangement[pos];
        rec(b + 1);
      } while (std::next_permutation(arrangement.begin(), arrangement.end()));
    };
    rec(0);
    return best;
  }

  // Greedy within-block pairwise swaps to a local minimum, with O(n) swap
  // deltas: a swap of positions a and b only touches pairs containing them.
  std::vector<int> perm = identity;
  const int m = n * (n - 1) / 2;
  auto pair_contrib = [&](int i, int j) {
    const int slot = slot_index(n, perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    return -logp(slot, inst.bond_matrix[static_cast<std::size_t>(std::min(i, j))]
                           [static_cast<std::size_t>(std::max(i, j))]) / m;
  };
  auto swap_delta = [&](int a, int b) {
    double before = 0.0, after = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == a || j == b) continue;
      before += pair_contrib(a, j) + pair_contrib(b, j);
    }
    before += pair_contrib(a, b);
    std::swap(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
    for (int j = 0; j < n; ++j) {
      if (j == a || j == b) continue;
      after += pair_contrib(a, j) + pair_contrib(b, j);
    }
    after += pair_contrib(a, b);
    std::swap(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
    return after - before;
  };

  for (int pass = 0; pass < 4 * n; ++pass) {
    double best_delta = -1e-12;
    int swap_a = -1, swap_b = -1;
    for (const auto& block : blocks) {
      for (std::size_t x = 0; x < block.size(); ++x)
        for (std::size_t y = x + 1; y < block.size(); ++y) {
          const double d = swap_delta(block[x], block[y]);
          if (d < best_delta) {
            best_delta = d;
            swap_a = block[x];
            swap_b = block[y];
          }
        }
    }
    if (swap_a < 0) break;
    std::swap(perm[static_cast<std::size_t>(swap_a)], perm[static_cast<std::size_t>(swap_b)]);
  }
  const double loss = perm_loss_from_logp(logp, inst, perm);
  if (loss < best.loss) {
    best.loss = loss;
    best.permutation = perm;
  }
  return best;
}

double permuted_cross_entropy(const Eigen::MatrixXd& logits, const MoleculeInstance& inst,
                              const std::vector<int>& perm, Eigen::MatrixXd* d_logits) {
  const int n = inst.num_atoms();
  const int m = n * (n - 1) / 2;
  if (static_cast<int>(perm.size()) != n) throw ArgumentError("permutation size mismatch");

  const Eigen::MatrixXd logp = log_softmax_rows(logits);
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());

  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int slot = slot_index(n, perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      const int label = inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      acc -= logp(slot, label);
      if (d_logits) {
        const Eigen::VectorXd p = logp.row(slot).array().exp();
        d_logits->row(slot) += p.transpose() / m;
        (*d_logits)(slot, label) -= 1.0 / m;
      }
    }
  return acc / m;
}

double all_zero_accuracy(const std::vector<MoleculeInstance>& dataset) {
  if (dataset.empty()) throw ArgumentError("empty dataset");
  double acc = 0.0;
  for (const auto& inst : dataset) {
    const auto labels = label_matrix(inst);
    int zero = 0;
    for (int l : labels)
      if (l == 0) ++zero;
    acc += static_cast<double>(zero) / labels.size();
  }
  return acc / dataset.size();
}

MoleculeMetrics molecule_metrics(const MoleculeInstance& inst, const Eigen::MatrixXd& logits) {
  const int n = inst.num_atoms();
  if (logits.rows() != n * (n - 1) / 2) throw ArgumentError("logit row count mismatch");

  MoleculeMetrics mm;
  int correct = 0, heavy_correct = 0, heavy_total = 0;
  std::vector<int> pred_row_sum(static_cast<std::size_t>(n), 0);
  int s = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++s) {
      int cls = 0;
      logits.row(s).maxCoeff(&cls);
      const int label = inst.bond_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (cls == label) ++correct;
      const bool heavy = inst.atoms[static_cast<std::size_t>(i)].element != Element::FakeH &&
                         inst.atoms[static_cast<std::size_t>(j)].element != Element::FakeH;
      if (heavy) {
        ++heavy_total;
        if (cls == label) ++heavy_correct;
      }
      pred_row_sum[static_cast<std::size_t>(i)] += cls;
      pred_row_sum[static_cast<std::size_t>(j)] += cls;
    }
  mm.accuracy = static_cast<double>(correct) / (n * (n - 1) / 2);
  mm.accuracy_heavy = heavy_total > 0 ? static_cast<double>(heavy_correct) / heavy_total : 1.0;
  mm.atoms_total = n;
  for (int i = 0; i < n; ++i)
    if (pred_row_sum[static_cast<std::size_t>(i)] == inst.atoms[static_cast<std::size_t>(i)].valence)
      ++mm.atoms_satisfied;
  return mm;
}

MetricsRecord evaluate(Model& model, const std::vector<MoleculeInstance>& dataset,
                       const AblationFlags& ablation, double perm_cap) {
  if (dataset.empty()) throw ArgumentError("empty dataset");
  MetricsRecord rec;
  long atoms_total = 0, atoms_ok = 0;
  double acc_sum = 0.0, acc_heavy_sum = 0.0, loss_sum = 0.0;

  for (const auto& inst : dataset) {
    const BuiltGraph bg = model.build(inst);
    const Eigen::MatrixXd logits = model.forward(bg, inst, nullptr, ablation);
    loss_sum += permutation_min_loss(logits, inst, perm_cap).loss;
    const MoleculeMetrics mm = molecule_metrics(inst, logits);
    acc_sum += mm.accuracy;
    acc_heavy_sum += mm.accuracy_heavy;
    atoms_ok += mm.atoms_satisfied;
    atoms_total += mm.atoms_total;
  }
  rec.loss = loss_sum / dataset.size();
  rec.accuracy = acc_sum / dataset.size();
  rec.accuracy_heavy = acc_heavy_sum / dataset.size();
  rec.valence_rate = static_cast<double>(atoms_ok) / atoms_total;
  return rec;
}

namespace {

struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m, v;
  long step = 0;
};

void apply_gradients(Model& model, const TrainConfig& cfg, AdamState& adam, double scale) {
  auto& store = model.params();
  if (cfg.optimizer == TrainConfig::Optimizer::Sgd) {
    for (auto& [name, g] : store.grads()) store.mutable_tensors().at(name) -= cfg.learning_rate * scale * g;
    return;
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam.step;
  for (auto& [name, g] : store.grads()) {
    Eigen::MatrixXd grad = scale * g;
    auto mit = adam.m.find(name);
    if (mit == adam.m.end()) {
      adam.m.emplace(name, Eigen::MatrixXd::Zero(grad.rows(), grad.cols()));
      adam.v.emplace(name, Eigen::MatrixXd::Zero(grad.rows(), grad.cols()));
    }
    auto& m = adam.m.at(name);
    auto& v = adam.v.at(name);
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    const Eigen::ArrayXXd mhat = m.array() / corr1;
    const Eigen::ArrayXXd vhat = v.array() / corr2;
    store.mutable_tensors().at(name).array() -= cfg.learning_rate * mhat / (vhat.sqrt() + eps);
  }
}

}  // namespace

TrainResult train(Model& model, const std::vector<MoleculeInstance>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ArgumentError("empty dataset");

  model.fit_sharing(dataset);

  const int total = static_cast<int>(dataset.size());
  int val_count = static_cast<int>(std::lround(cfg.val_fraction * total));
  val_count = std::min(val_count, total - 1);
  const int train_count = total - val_count;

  std::vector<const MoleculeInstance*> train_set, val_set;
  for (int i = 0; i < train_count; ++i) train_set.push_back(&dataset[static_cast<std::size_t>(i)]);
  for (int i = train_count; i < total; ++i) val_set.push_back(&dataset[static_cast<std::size_t>(i)]);
  if (val_set.empty()) val_set = train_set; // degenerate split: validate on train

  std::vector<BuiltGraph> graphs;
  graphs.reserve(dataset.size());
  for (const auto& inst : dataset) graphs.push_back(model.build(inst));

  auto eval_subset = [&](const std::vector<const MoleculeInstance*>& subset) {
    std::vector<MoleculeInstance> copy;
    copy.reserve(subset.size());
    for (const auto* p : subset) copy.push_back(*p);
    return evaluate(model, copy, {}, cfg.perm_cap);
  };

  TrainResult result;
  AdamState adam;
  std::map<std::string, Eigen::MatrixXd> best_params = model.params().tensors();
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<int> order(static_cast<std::size_t>(train_count));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    bool finite = true;
    for (int start = 0; start < train_count; start += cfg.batch_size) {
      const int end = std::min(start + cfg.batch_size, train_count);
      model.params().zero_grads();
      for (int idx = start; idx < end; ++idx) {
        const int mi = order[static_cast<std::size_t>(idx)];
        const MoleculeInstance& inst = *train_set[static_cast<std::size_t>(mi)];
        const BuiltGraph& bg = graphs[static_cast<std::size_t>(mi)];
        NetTrace trace;
        const Eigen::MatrixXd logits = model.forward(bg, inst, &trace);
        const auto pm = permutation_min_loss(logits, inst, cfg.perm_cap);
        Eigen::MatrixXd d_logits;
        const double loss = permuted_cross_entropy(logits, inst, pm.permutation, &d_logits);
        if (!std::isfinite(loss)) {
          finite = false;
          break;
        }
        epoch_loss += loss;
        model.backward(bg, inst, trace, d_logits);
      }
      if (!finite) break;
      apply_gradients(model, cfg, adam, 1.0 / (end - start));
    }
    if (!finite) {
      model.params().mutable_tensors() = best_params;
      result.aborted = true;
      break;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / train_count;
    log.val = eval_subset(val_set);
    result.log.push_back(log);
    if (log.val.loss < best_val) {
      best_val = log.val.loss;
      best_params = model.params().tensors();
      result.best_epoch = epoch;
    }
  }

  model.params().mutable_tensors() = best_params;
  return result;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  if (r == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index c = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  return m;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

std::string checkpoint_to_json(const Model& model) {
  const auto& cfg = model.config();
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = "mfgn-checkpoint";
  j["seed"] = cfg.seed;
  j["config"] = {
      {"hidden_size", cfg.hidden_size},
      {"rank", cfg.rank},
      {"iterations", cfg.iterations},
      {"init_rounds", cfg.init_rounds},
      {"mlp_layers", cfg.mlp_layers},
      {"activation", cfg.activation == Activation::Tanh ? "tanh" : "relu"},
      {"sharing_b", to_string(cfg.sharing_b)},
      {"sharing_c", to_string(cfg.sharing_c)},
      {"k_clusters", cfg.k_clusters},
      {"valence_bridge", cfg.valence_bridge},
      {"bc_factors", cfg.bc_factors},
      {"max_atoms", cfg.max_atoms},
  };
  j["cluster_centers"] = model.sharing().cluster_centers;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, tensor] : model.params().tensors()) params[name] = matrix_to_json(tensor);
  j["params"] = std::move(params);
  return j.dump(2);
}

Model model_from_checkpoint_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointVersion)
    throw ConfigError("checkpoint format version mismatch");

  ModelConfig cfg;
  const auto& c = j.at("config");
  cfg.hidden_size = c.at("hidden_size").get<int>();
  cfg.rank = c.at("rank").get<int>();
  cfg.iterations = c.at("iterations").get<int>();
  cfg.init_rounds = c.at("init_rounds").get<int>();
  cfg.mlp_layers = c.at("mlp_layers").get<int>();
  cfg.activation = c.at("activation").get<std::string>() == "tanh" ? Activation::Tanh : Activation::ReLU;
  cfg.sharing_b = sharing_level_from_string(c.at("sharing_b").get<std::string>());
  cfg.sharing_c = sharing_level_from_string(c.at("sharing_c").get<std::string>());
  cfg.k_clusters = c.at("k_clusters").get<int>();
  cfg.valence_bridge = c.at("valence_bridge").get<bool>();
  cfg.bc_factors = c.at("bc_factors").get<bool>();
  cfg.max_atoms = c.at("max_atoms").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();

  Model model(cfg);
  model.sharing().cluster_centers = j.at("cluster_centers").get<std::vector<double>>();
  for (const auto& [name, rows] : j.at("params").items()) {
    const Eigen::MatrixXd m = matrix_from_json(rows);
    model.params().get(name, static_cast<int>(m.rows()), static_cast<int>(m.cols()), true) = m;
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_json(model);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_checkpoint_json(ss.str());
}

}  // namespace mfgn
