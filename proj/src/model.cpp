#include "mfgn/model.hpp"

#include <cmath>

#include "mfgn/error.hpp"
#include "mfgn/rng.hpp"

namespace mfgn {

namespace {

// Fixed (non-learned) bridge matrices, identical across runs.
Eigen::MatrixXd fixed_random_matrix(int rows, int cols, std::uint64_t tag) {
  Rng rng(Rng::derive(0x6272696467655aULL, tag));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-0.6, 0.6);
  return m;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

// d(softmax)/dz applied to an upstream gradient: (diag(g) - g g^T) * dg.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& g, const Eigen::VectorXd& dg) {
  return g.cwiseProduct(dg) - g * g.dot(dg);
}

}  // namespace

void ModelConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
  if (rank < 1) throw ConfigError("rank must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (init_rounds < 0) throw ConfigError("init_rounds must be >= 0");
  if (mlp_layers < 1 || mlp_layers > 2) throw ConfigError("mlp_layers must be 1 or 2");
  if (max_atoms < 2) throw ConfigError("max_atoms must be >= 2");
}

Eigen::MatrixXd& ParamStore::get(const std::string& name, int rows, int cols, bool zero_init) {
  auto it = tensors_.find(name);
  if (it != tensors_.end()) {
    if (it->second.rows() != rows || it->second.cols() != cols)
      throw ArgumentError("tensor shape mismatch for " + name);
    return it->second;
  }
  Eigen::MatrixXd m(rows, cols);
  if (zero_init) {
    m.setZero();
  } else {
    Rng rng(Rng::derive(seed_, Rng::hash_string(name)));
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
  }
  return tensors_.emplace(name, std::move(m)).first->second;
}

Eigen::MatrixXd& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it != grads_.end()) return it->second;
  const auto& t = tensors_.at(name);
  return grads_.emplace(name, Eigen::MatrixXd::Zero(t.rows(), t.cols())).first->second;
}

void ParamStore::zero_grads() { grads_.clear(); }

Model::Model(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
  cfg_.validate();
  sharing_.level_b = cfg_.sharing_b;
  sharing_.level_c = cfg_.sharing_c;
  sharing_.k_clusters = cfg_.k_clusters;
  bridge_down_ = fixed_random_matrix(5, cfg_.hidden_size, 1);
  bridge_up_ = fixed_random_matrix(cfg_.hidden_size, 5, 2);
}

void Model::fit_sharing(const std::vector<MoleculeInstance>& train) {
  if (sharing_.level_c != SharingLevel::Medium) return;
  std::vector<int> mzs;
  for (const auto& inst : train)
    for (const auto& p : inst.peaks) mzs.push_back(p.mz);
  if (mzs.empty()) throw ConfigError("cannot fit peak clusters from an empty training set");
  sharing_.cluster_centers = fit_peak_clusters(mzs, sharing_.k_clusters, cfg_.seed);
}

BuiltGraph Model::build(const MoleculeInstance& inst) const { return build_graph(inst, sharing_); }

MlpParams Model::make_mlp(const std::string& prefix) {
  const int H = cfg_.hidden_size;
  MlpParams mlp;
  mlp.activation = cfg_.activation;
  for (int l = 0; l < cfg_.mlp_layers; ++l) {
    mlp.weights.push_back(store_.get(prefix + "/w" + std::to_string(l), H, H));
    mlp.biases.push_back(store_.get(prefix + "/b" + std::to_string(l), H, 1, true).col(0));
  }
  return mlp;
}

void Model::mlp_grads_into(const std::string& prefix, const MlpGradients& g) {
  for (std::size_t l = 0; l < g.d_weights.size(); ++l) {
    store_.grad(prefix + "/w" + std::to_string(l)) += g.d_weights[l];
    store_.grad(prefix + "/b" + std::to_string(l)).col(0) += g.d_biases[l];
  }
}

std::vector<Eigen::VectorXd> Model::init_states(const BuiltGraph& bg, const MoleculeInstance& inst,
                                                InitTrace* trace) {
  const int H = cfg_.hidden_size;
  const int n = inst.num_atoms();
  const int m = static_cast<int>(bg.edge_slots.size());
  const int k = static_cast<int>(bg.peak_vars.size());
  const int V = n + m + k;
  const int P = cfg_.max_atoms;

  auto& e_elem = store_.get("emb/elem", 3, H);
  auto& e_pos = store_.get("emb/pos", P, H);
  auto& e_edge_base = store_.get("emb/edge_base", 1, H);
  auto& e_edge_pos = store_.get("emb/edge_pos", P, H);
  auto& w_peak = store_.get("emb/peak", H, 3);

  std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(V));
  std::vector<Eigen::Vector3d> peak_inputs(static_cast<std::size_t>(k));

  for (int i = 0; i < n; ++i) {
    const int e = static_cast<int>(inst.atoms[static_cast<std::size_t>(i)].element);
    const int p = std::min(i, P - 1);
    h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] =
        e_elem.row(e).transpose() + e_pos.row(p).transpose();
  }
  for (int s = 0; s < m; ++s) {
    const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
    h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] =
        e_edge_base.row(0).transpose() + e_edge_pos.row(std::min(i, P - 1)).transpose() +
        e_edge_pos.row(std::min(j, P - 1)).transpose();
  }
  for (int p = 0; p < k; ++p) {
    Eigen::Vector3d in(inst.peaks[static_cast<std::size_t>(p)].mz / 100.0,
                       inst.peaks[static_cast<std::size_t>(p)].intensity, 1.0);
    peak_inputs[static_cast<std::size_t>(p)] = in;
    h[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])] = w_peak * in;
  }

  if (trace) {
    trace->embed = h;
    trace->peak_inputs = peak_inputs;
    trace->round_in.clear();
    trace->round_out.clear();
  }

  auto& w_aa = store_.get("init/w_aa", H, H);
  auto& w_ae = store_.get("init/w_ae", H, H);
  auto& w_ee = store_.get("init/w_ee", H, H);
  auto& w_ea = store_.get("init/w_ea", H, H);
  auto& w_pp = store_.get("init/w_pp", H, H);
  auto& b_a = store_.get("init/b_a", H, 1, true);
  auto& b_e = store_.get("init/b_e", H, 1, true);
  auto& b_p = store_.get("init/b_p", H, 1, true);

  for (int round = 0; round < cfg_.init_rounds; ++round) {
    if (trace) trace->round_in.push_back(h);
    std::vector<Eigen::VectorXd> next(static_cast<std::size_t>(V));
    // Atoms gather their incident edge states.
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd esum = Eigen::VectorXd::Zero(H);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        esum += h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(bg.edge_slot_index(i, j))])];
      }
      const auto& hi = h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
      next[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] =
          (w_aa * hi + w_ae * esum + b_a.col(0)).array().tanh();
    }
    // Edges gather their endpoints.
    for (int s = 0; s < m; ++s) {
      const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
      const auto& he = h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
      const auto asum = h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] +
                        h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(j)])];
      next[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] =
          (w_ee * he + w_ea * asum + b_e.col(0)).array().tanh();
    }
    // Peaks update on their own.
    for (int p = 0; p < k; ++p) {
      const auto& hp = h[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
      next[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])] =
          (w_pp * hp + b_p.col(0)).array().tanh();
    }
    h = std::move(next);
    if (trace) trace->round_out.push_back(h);
  }
  return h;
}

Eigen::MatrixXd Model::forward(const BuiltGraph& bg, const MoleculeInstance& inst, NetTrace* trace,
                               const AblationFlags& ablation) {
  const int H = cfg_.hidden_size;
  const int r = cfg_.rank;
  const int n = inst.num_atoms();
  const int m = static_cast<int>(bg.edge_slots.size());
  const int k = static_cast<int>(bg.peak_vars.size());
  const int V = n + m + k;
  const bool use_bc = cfg_.bc_factors && !ablation.drop_bc;
  const bool use_bridge = cfg_.valence_bridge && !ablation.drop_valence;

  std::vector<Eigen::VectorXd> h = init_states(bg, inst, trace ? &trace->init : nullptr);

  MlpParams mlp_atom = make_mlp("mlp/atom");
  MlpParams mlp_edge = make_mlp("mlp/edge");
  MlpParams mlp_peak = make_mlp("mlp/peak");

  if (trace) trace->iters.assign(static_cast<std::size_t>(cfg_.iterations), IterTrace{});

  for (int t = 0; t < cfg_.iterations; ++t) {
    IterTrace* it = trace ? &trace->iters[static_cast<std::size_t>(t)] : nullptr;
    if (it) {
      it->h = h;
      it->agg.assign(static_cast<std::size_t>(V), Eigen::VectorXd());
      it->mlp_tapes.assign(static_cast<std::size_t>(V), MlpTape{});
      it->b_u.assign(static_cast<std::size_t>(m), {});
      it->c_uz.assign(static_cast<std::size_t>(k), Eigen::VectorXd());
      it->c_ux.assign(static_cast<std::size_t>(k), {});
      it->c_prefix.assign(static_cast<std::size_t>(k), {});
      it->c_suffix.assign(static_cast<std::size_t>(k), {});
      it->g.assign(static_cast<std::size_t>(m), Eigen::VectorXd());
      it->atom_tapes.assign(static_cast<std::size_t>(n), nullptr);
    }

    std::vector<Eigen::VectorXd> next(static_cast<std::size_t>(V));
    std::vector<Eigen::VectorXd> agg(static_cast<std::size_t>(V),
                                     Eigen::VectorXd::Zero(H)); // per-variable MLP inputs

    // Type B projections.
    std::vector<std::array<Eigen::VectorXd, 3>> b_u(static_cast<std::size_t>(m));
    if (use_bc) {
      for (int s = 0; s < m; ++s) {
        const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
        const std::string& key = bg.factor_param_key.at(bg.edge_factors[static_cast<std::size_t>(s)]);
        const auto& w_y = store_.get("fB/" + key + "/y", H, r);
        const auto& w_u = store_.get("fB/" + key + "/u", H, r);
        const auto& w_w = store_.get("fB/" + key + "/w", H, r);
        b_u[static_cast<std::size_t>(s)][0] =
            w_y.transpose() * h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
        b_u[static_cast<std::size_t>(s)][1] =
            w_u.transpose() * h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
        b_u[static_cast<std::size_t>(s)][2] =
            w_w.transpose() * h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(j)])];
      }
    }

    // Type C projections and prefix/suffix products over atom slots.
    std::vector<Eigen::VectorXd> c_uz(static_cast<std::size_t>(k));
    std::vector<std::vector<Eigen::VectorXd>> c_ux(static_cast<std::size_t>(k));
    std::vector<std::vector<Eigen::VectorXd>> c_prefix(static_cast<std::size_t>(k));
    std::vector<std::vector<Eigen::VectorXd>> c_suffix(static_cast<std::size_t>(k));
    if (use_bc) {
      for (int p = 0; p < k; ++p) {
        const std::string& key = bg.factor_param_key.at(bg.peak_factors[static_cast<std::size_t>(p)]);
        const auto& w_z = store_.get("fC/" + key + "/z", H, r);
        const auto& w_x = store_.get("fC/" + key + "/x", H, r);
        c_uz[static_cast<std::size_t>(p)] =
            w_z.transpose() * h[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
        auto& ux = c_ux[static_cast<std::size_t>(p)];
        ux.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
          ux[static_cast<std::size_t>(i)] =
              w_x.transpose() * h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
        auto& pre = c_prefix[static_cast<std::size_t>(p)];
        auto& suf = c_suffix[static_cast<std::size_t>(p)];
        pre.assign(static_cast<std::size_t>(n) + 1, Eigen::VectorXd::Ones(r));
        suf.assign(static_cast<std::size_t>(n) + 1, Eigen::VectorXd::Ones(r));
        for (int i = 0; i < n; ++i)
          pre[static_cast<std::size_t>(i) + 1] =
              pre[static_cast<std::size_t>(i)].cwiseProduct(ux[static_cast<std::size_t>(i)]);
        for (int i = n - 1; i >= 0; --i)
          suf[static_cast<std::size_t>(i)] =
              suf[static_cast<std::size_t>(i) + 1].cwiseProduct(ux[static_cast<std::size_t>(i)]);
      }
    }

    // Valence bridge: softmax each edge state, run the DP per atom factor.
    std::vector<Eigen::VectorXd> g_dist(static_cast<std::size_t>(m));
    std::vector<std::shared_ptr<ValenceTape>> atom_tapes(static_cast<std::size_t>(n));
    if (use_bridge) {
      for (int s = 0; s < m; ++s)
        g_dist[static_cast<std::size_t>(s)] = softmax(
            bridge_down_ * h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])]);
      for (int i = 0; i < n; ++i) {
        const auto& f = bg.graph.factor(bg.atom_factors[static_cast<std::size_t>(i)]);
        const auto& spec = std::get<ValencePayload>(f.payload).spec;
        std::vector<DiscreteDistribution> incoming;
        incoming.reserve(f.neighbors.size());
        for (int var : f.neighbors) {
          const int slot = var - n; // edge variables follow the atom block
          const auto& g = g_dist[static_cast<std::size_t>(slot)];
          incoming.emplace_back(std::vector<double>(g.data(), g.data() + g.size()));
        }
        atom_tapes[static_cast<std::size_t>(i)] = std::make_shared<ValenceTape>(spec, incoming);
      }
    }

    // Atom updates: sum of incident B terms then C terms (ascending factor id).
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd& a = agg[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
      if (use_bc) {
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const int s = bg.edge_slot_index(i, j);
          const auto [lo, hi] = bg.edge_slots[static_cast<std::size_t>(s)];
          const std::string& key = bg.factor_param_key.at(bg.edge_factors[static_cast<std::size_t>(s)]);
          const auto& u = b_u[static_cast<std::size_t>(s)];
          if (i == lo)
            a += store_.get("fB/" + key + "/u", H, r) * u[0].cwiseProduct(u[2]);
          else
            a += store_.get("fB/" + key + "/w", H, r) * u[0].cwiseProduct(u[1]);
        }
        for (int p = 0; p < k; ++p) {
          const std::string& key = bg.factor_param_key.at(bg.peak_factors[static_cast<std::size_t>(p)]);
          const Eigen::VectorXd excl = c_prefix[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)]
                                           .cwiseProduct(c_suffix[static_cast<std::size_t>(p)][static_cast<std::size_t>(i) + 1]);
          a += store_.get("fC/" + key + "/x", H, r) *
               c_uz[static_cast<std::size_t>(p)].cwiseProduct(excl);
        }
      }
      MlpTape* tape = it ? &it->mlp_tapes[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] : nullptr;
      const auto& hi = h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
      next[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] =
          hi + mlp_forward(mlp_atom, a, tape);
    }

    // Edge updates: the single B term, MLP, plus the valence-bridge messages.
    for (int s = 0; s < m; ++s) {
      Eigen::VectorXd& a = agg[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
      if (use_bc) {
        const std::string& key = bg.factor_param_key.at(bg.edge_factors[static_cast<std::size_t>(s)]);
        const auto& u = b_u[static_cast<std::size_t>(s)];
        a += store_.get("fB/" + key + "/y", H, r) * u[1].cwiseProduct(u[2]);
      }
      MlpTape* tape = it ? &it->mlp_tapes[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] : nullptr;
      const auto& he = h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
      Eigen::VectorXd out = he + mlp_forward(mlp_edge, a, tape);
      if (use_bridge) {
        const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
        for (int end : {i, j}) {
          const auto& f = bg.graph.factor(bg.atom_factors[static_cast<std::size_t>(end)]);
          const int slot = bg.graph.slot_of(f.id, bg.edge_vars[static_cast<std::size_t>(s)]);
          const auto& msg = atom_tapes[static_cast<std::size_t>(end)]->outputs().messages[static_cast<std::size_t>(slot)];
          out += bridge_up_ * Eigen::Map<const Eigen::VectorXd>(msg.values.data(), 5);
        }
      }
      next[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] = std::move(out);
    }

    // Peak updates: each peak sees its own C factor.
    for (int p = 0; p < k; ++p) {
      Eigen::VectorXd& a = agg[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
      if (use_bc) {
        const std::string& key = bg.factor_param_key.at(bg.peak_factors[static_cast<std::size_t>(p)]);
        a += store_.get("fC/" + key + "/z", H, r) * c_prefix[static_cast<std::size_t>(p)][static_cast<std::size_t>(n)];
      }
      MlpTape* tape = it ? &it->mlp_tapes[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])] : nullptr;
      const auto& hp = h[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
      next[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])] =
          hp + mlp_forward(mlp_peak, a, tape);
    }

    if (it) {
      it->agg = agg;
      it->b_u = std::move(b_u);
      it->c_uz = std::move(c_uz);
      it->c_ux = std::move(c_ux);
      it->c_prefix = std::move(c_prefix);
      it->c_suffix = std::move(c_suffix);
      it->g = std::move(g_dist);
      it->atom_tapes = std::move(atom_tapes);
    }
    h = std::move(next);
  }

  if (trace) trace->h_final = h;

  auto& w_r = store_.get("readout/w", 5, cfg_.hidden_size);
  auto& b_r = store_.get("readout/b", 5, 1, true);
  Eigen::MatrixXd logits(m, 5);
  for (int s = 0; s < m; ++s)
    logits.row(s) =
        (w_r * h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] + b_r.col(0)).transpose();
  if (!logits.allFinite()) throw NumericalError("non-finite edge logits");
  return logits;
}

void Model::backward(const BuiltGraph& bg, const MoleculeInstance& inst, const NetTrace& trace,
                     const Eigen::MatrixXd& d_logits, const AblationFlags& ablation) {
  const int H = cfg_.hidden_size;
  const int r = cfg_.rank;
  const int n = inst.num_atoms();
  const int m = static_cast<int>(bg.edge_slots.size());
  const int k = static_cast<int>(bg.peak_vars.size());
  const int V = n + m + k;
  const bool use_bc = cfg_.bc_factors && !ablation.drop_bc;
  const bool use_bridge = cfg_.valence_bridge && !ablation.drop_valence;

  MlpParams mlp_atom = make_mlp("mlp/atom");
  MlpParams mlp_edge = make_mlp("mlp/edge");
  MlpParams mlp_peak = make_mlp("mlp/peak");

  // Readout.
  auto& w_r = store_.get("readout/w", 5, H);
  std::vector<Eigen::VectorXd> dh(static_cast<std::size_t>(V), Eigen::VectorXd::Zero(H));
  for (int s = 0; s < m; ++s) {
    const Eigen::VectorXd dl = d_logits.row(s).transpose();
    store_.grad("readout/w") += dl * trace.h_final[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])].transpose();
    store_.grad("readout/b").col(0) += dl;
    dh[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] += w_r.transpose() * dl;
  }

  // Iterations in reverse.
  for (int t = cfg_.iterations - 1; t >= 0; --t) {
    const IterTrace& it = trace.iters[static_cast<std::size_t>(t)];
    std::vector<Eigen::VectorXd> dprev(static_cast<std::size_t>(V), Eigen::VectorXd::Zero(H));

    // Residual passthrough.
    for (int v = 0; v < V; ++v) dprev[static_cast<std::size_t>(v)] = dh[static_cast<std::size_t>(v)];

    // Valence bridge backward: gather per-atom message gradients.
    if (use_bridge) {
      std::vector<Eigen::VectorXd> dg(static_cast<std::size_t>(m), Eigen::VectorXd::Zero(5));
      for (int i = 0; i < n; ++i) {
        const auto& f = bg.graph.factor(bg.atom_factors[static_cast<std::size_t>(i)]);
        const int arity = static_cast<int>(f.neighbors.size());
        std::vector<std::vector<double>> dout(static_cast<std::size_t>(arity),
                                              std::vector<double>(5, 0.0));
        for (int slot = 0; slot < arity; ++slot) {
          const int edge_var = f.neighbors[static_cast<std::size_t>(slot)];
          const Eigen::VectorXd dmsg = bridge_up_.transpose() * dh[static_cast<std::size_t>(edge_var)];
          for (int x = 0; x < 5; ++x) dout[static_cast<std::size_t>(slot)][static_cast<std::size_t>(x)] = dmsg(x);
        }
        const auto din = it.atom_tapes[static_cast<std::size_t>(i)]->backward(dout);
        for (int slot = 0; slot < arity; ++slot) {
          const int edge_slot = f.neighbors[static_cast<std::size_t>(slot)] - n;
          for (int x = 0; x < 5; ++x)
            dg[static_cast<std::size_t>(edge_slot)](x) += din[static_cast<std::size_t>(slot)][static_cast<std::size_t>(x)];
        }
      }
      for (int s = 0; s < m; ++s) {
        const Eigen::VectorXd dz = softmax_backward(it.g[static_cast<std::size_t>(s)], dg[static_cast<std::size_t>(s)]);
        dprev[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] += bridge_down_.transpose() * dz;
      }
    }

    // MLP backward per variable; d_agg drives the factor-term backward.
    std::vector<Eigen::VectorXd> dagg(static_cast<std::size_t>(V), Eigen::VectorXd::Zero(H));
    for (int i = 0; i < n; ++i) {
      const int v = bg.atom_vars[static_cast<std::size_t>(i)];
      const auto g = mlp_backward(mlp_atom, it.mlp_tapes[static_cast<std::size_t>(v)],
                                  it.agg[static_cast<std::size_t>(v)], dh[static_cast<std::size_t>(v)]);
      mlp_grads_into("mlp/atom", g);
      dagg[static_cast<std::size_t>(v)] = g.d_input;
    }
    for (int s = 0; s < m; ++s) {
      const int v = bg.edge_vars[static_cast<std::size_t>(s)];
      const auto g = mlp_backward(mlp_edge, it.mlp_tapes[static_cast<std::size_t>(v)],
                                  it.agg[static_cast<std::size_t>(v)], dh[static_cast<std::size_t>(v)]);
      mlp_grads_into("mlp/edge", g);
      dagg[static_cast<std::size_t>(v)] = g.d_input;
    }
    for (int p = 0; p < k; ++p) {
      const int v = bg.peak_vars[static_cast<std::size_t>(p)];
      const auto g = mlp_backward(mlp_peak, it.mlp_tapes[static_cast<std::size_t>(v)],
                                  it.agg[static_cast<std::size_t>(v)], dh[static_cast<std::size_t>(v)]);
      mlp_grads_into("mlp/peak", g);
      dagg[static_cast<std::size_t>(v)] = g.d_input;
    }

    if (use_bc) {
      // Type B backward: per-slot projection gradients.
      std::vector<std::array<Eigen::VectorXd, 3>> db_u(
          static_cast<std::size_t>(m),
          {Eigen::VectorXd::Zero(r), Eigen::VectorXd::Zero(r), Eigen::VectorXd::Zero(r)});
      for (int s = 0; s < m; ++s) {
        const auto [lo, hi] = bg.edge_slots[static_cast<std::size_t>(s)];
        const std::string& key = bg.factor_param_key.at(bg.edge_factors[static_cast<std::size_t>(s)]);
        const auto& u = it.b_u[static_cast<std::size_t>(s)];
        const auto& w_y = store_.get("fB/" + key + "/y", H, r);
        const auto& w_u = store_.get("fB/" + key + "/u", H, r);
        const auto& w_w = store_.get("fB/" + key + "/w", H, r);

        // Term into the edge aggregate: w_y (u1 . u2).
        {
          const Eigen::VectorXd& da = dagg[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
          store_.grad("fB/" + key + "/y") += da * u[1].cwiseProduct(u[2]).transpose();
          const Eigen::VectorXd dq = w_y.transpose() * da;
          db_u[static_cast<std::size_t>(s)][1] += dq.cwiseProduct(u[2]);
          db_u[static_cast<std::size_t>(s)][2] += dq.cwiseProduct(u[1]);
        }
        // Term into atom lo: w_u (u0 . u2).
        {
          const Eigen::VectorXd& da = dagg[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(lo)])];
          store_.grad("fB/" + key + "/u") += da * u[0].cwiseProduct(u[2]).transpose();
          const Eigen::VectorXd dq = w_u.transpose() * da;
          db_u[static_cast<std::size_t>(s)][0] += dq.cwiseProduct(u[2]);
          db_u[static_cast<std::size_t>(s)][2] += dq.cwiseProduct(u[0]);
        }
        // Term into atom hi: w_w (u0 . u1).
        {
          const Eigen::VectorXd& da = dagg[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(hi)])];
          store_.grad("fB/" + key + "/w") += da * u[0].cwiseProduct(u[1]).transpose();
          const Eigen::VectorXd dq = w_w.transpose() * da;
          db_u[static_cast<std::size_t>(s)][0] += dq.cwiseProduct(u[1]);
          db_u[static_cast<std::size_t>(s)][1] += dq.cwiseProduct(u[0]);
        }

        // Projections back to states and weights.
        const auto& he = it.h[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])];
        const auto& hlo = it.h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(lo)])];
        const auto& hhi = it.h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(hi)])];
        store_.grad("fB/" + key + "/y") += he * db_u[static_cast<std::size_t>(s)][0].transpose();
        dprev[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(s)])] +=
            w_y * db_u[static_cast<std::size_t>(s)][0];
        store_.grad("fB/" + key + "/u") += hlo * db_u[static_cast<std::size_t>(s)][1].transpose();
        dprev[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(lo)])] +=
            w_u * db_u[static_cast<std::size_t>(s)][1];
        store_.grad("fB/" + key + "/w") += hhi * db_u[static_cast<std::size_t>(s)][2].transpose();
        dprev[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(hi)])] +=
            w_w * db_u[static_cast<std::size_t>(s)][2];
      }

      // Type C backward.
      for (int p = 0; p < k; ++p) {
        const std::string& key = bg.factor_param_key.at(bg.peak_factors[static_cast<std::size_t>(p)]);
        const auto& w_z = store_.get("fC/" + key + "/z", H, r);
        const auto& w_x = store_.get("fC/" + key + "/x", H, r);
        const auto& uz = it.c_uz[static_cast<std::size_t>(p)];
        const auto& ux = it.c_ux[static_cast<std::size_t>(p)];
        const auto& pre = it.c_prefix[static_cast<std::size_t>(p)];
        const auto& suf = it.c_suffix[static_cast<std::size_t>(p)];

        Eigen::VectorXd duz = Eigen::VectorXd::Zero(r);
        std::vector<Eigen::VectorXd> dpre(static_cast<std::size_t>(n) + 1, Eigen::VectorXd::Zero(r));
        std::vector<Eigen::VectorXd> dsuf(static_cast<std::size_t>(n) + 1, Eigen::VectorXd::Zero(r));
        std::vector<Eigen::VectorXd> dux(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(r));

        // Atom terms: w_x (uz . excl_i).
        for (int i = 0; i < n; ++i) {
          const Eigen::VectorXd& da = dagg[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
          const Eigen::VectorXd excl =
              pre[static_cast<std::size_t>(i)].cwiseProduct(suf[static_cast<std::size_t>(i) + 1]);
          store_.grad("fC/" + key + "/x") += da * uz.cwiseProduct(excl).transpose();
          const Eigen::VectorXd dq = w_x.transpose() * da;
          duz += dq.cwiseProduct(excl);
          const Eigen::VectorXd dexcl = dq.cwiseProduct(uz);
          dpre[static_cast<std::size_t>(i)] += dexcl.cwiseProduct(suf[static_cast<std::size_t>(i) + 1]);
          dsuf[static_cast<std::size_t>(i) + 1] += dexcl.cwiseProduct(pre[static_cast<std::size_t>(i)]);
        }
        // Peak term: w_z * pre[n].
        {
          const Eigen::VectorXd& da = dagg[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
          store_.grad("fC/" + key + "/z") += da * pre[static_cast<std::size_t>(n)].transpose();
          dpre[static_cast<std::size_t>(n)] += w_z.transpose() * da;
        }

        // Reverse the product chains.
        for (int i = n; i >= 1; --i) {
          dpre[static_cast<std::size_t>(i) - 1] +=
              dpre[static_cast<std::size_t>(i)].cwiseProduct(ux[static_cast<std::size_t>(i) - 1]);
          dux[static_cast<std::size_t>(i) - 1] +=
              dpre[static_cast<std::size_t>(i)].cwiseProduct(pre[static_cast<std::size_t>(i) - 1]);
        }
        for (int i = 0; i < n; ++i) {
          dsuf[static_cast<std::size_t>(i) + 1] +=
              dsuf[static_cast<std::size_t>(i)].cwiseProduct(ux[static_cast<std::size_t>(i)]);
          dux[static_cast<std::size_t>(i)] +=
              dsuf[static_cast<std::size_t>(i)].cwiseProduct(suf[static_cast<std::size_t>(i) + 1]);
        }

        // Projections back to states and weights.
        const auto& hp = it.h[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])];
        store_.grad("fC/" + key + "/z") += hp * duz.transpose();
        dprev[static_cast<std::size_t>(bg.peak_vars[static_cast<std::size_t>(p)])] += w_z * duz;
        for (int i = 0; i < n; ++i) {
          const auto& hi = it.h[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])];
          store_.grad("fC/" + key + "/x") += hi * dux[static_cast<std::size_t>(i)].transpose();
          dprev[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] +=
              w_x * dux[static_cast<std::size_t>(i)];
        }
      }
    }

    dh = std::move(dprev);
  }

  // Initializer rounds in reverse.
  const auto& init = trace.init;
  auto& w_aa = store_.get("init/w_aa", H, H);
  auto& w_ae = store_.get("init/w_ae", H, H);
  auto& w_ee = store_.get("init/w_ee", H, H);
  auto& w_ea = store_.get("init/w_ea", H, H);
  auto& w_pp = store_.get("init/w_pp", H, H);
  for (int round = cfg_.init_rounds - 1; round >= 0; --round) {
    const auto& in = init.round_in[static_cast<std::size_t>(round)];
    const auto& out = init.round_out[static_cast<std::size_t>(round)];
    std::vector<Eigen::VectorXd> dnew(static_cast<std::size_t>(V), Eigen::VectorXd::Zero(H));

    for (int i = 0; i < n; ++i) {
      const int v = bg.atom_vars[static_cast<std::size_t>(i)];
      const Eigen::VectorXd dz =
          dh[static_cast<std::size_t>(v)].cwiseProduct(
              (1.0 - out[static_cast<std::size_t>(v)].array().square()).matrix());
      Eigen::VectorXd esum = Eigen::VectorXd::Zero(H);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        esum += in[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(bg.edge_slot_index(i, j))])];
      }
      store_.grad("init/w_aa") += dz * in[static_cast<std::size_t>(v)].transpose();
      store_.grad("init/w_ae") += dz * esum.transpose();
      store_.grad("init/b_a").col(0) += dz;
      dnew[static_cast<std::size_t>(v)] += w_aa.transpose() * dz;
      const Eigen::VectorXd dedge = w_ae.transpose() * dz;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        dnew[static_cast<std::size_t>(bg.edge_vars[static_cast<std::size_t>(bg.edge_slot_index(i, j))])] += dedge;
      }
    }
    for (int s = 0; s < m; ++s) {
      const int v = bg.edge_vars[static_cast<std::size_t>(s)];
      const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
      const Eigen::VectorXd dz =
          dh[static_cast<std::size_t>(v)].cwiseProduct(
              (1.0 - out[static_cast<std::size_t>(v)].array().square()).matrix());
      const Eigen::VectorXd asum = in[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] +
                                   in[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(j)])];
      store_.grad("init/w_ee") += dz * in[static_cast<std::size_t>(v)].transpose();
      store_.grad("init/w_ea") += dz * asum.transpose();
      store_.grad("init/b_e").col(0) += dz;
      dnew[static_cast<std::size_t>(v)] += w_ee.transpose() * dz;
      const Eigen::VectorXd datom = w_ea.transpose() * dz;
      dnew[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(i)])] += datom;
      dnew[static_cast<std::size_t>(bg.atom_vars[static_cast<std::size_t>(j)])] += datom;
    }
    for (int p = 0; p < k; ++p) {
      const int v = bg.peak_vars[static_cast<std::size_t>(p)];
      const Eigen::VectorXd dz =
          dh[static_cast<std::size_t>(v)].cwiseProduct(
              (1.0 - out[static_cast<std::size_t>(v)].array().square()).matrix());
      store_.grad("init/w_pp") += dz * in[static_cast<std::size_t>(v)].transpose();
      store_.grad("init/b_p").col(0) += dz;
      dnew[static_cast<std::size_t>(v)] += w_pp.transpose() * dz;
    }
    dh = std::move(dnew);
  }

  // Embedding gradients.
  const int P = cfg_.max_atoms;
  for (int i = 0; i < n; ++i) {
    const int v = bg.atom_vars[static_cast<std::size_t>(i)];
    const int e = static_cast<int>(inst.atoms[static_cast<std::size_t>(i)].element);
    store_.grad("emb/elem").row(e) += dh[static_cast<std::size_t>(v)].transpose();
    store_.grad("emb/pos").row(std::min(i, P - 1)) += dh[static_cast<std::size_t>(v)].transpose();
  }
  for (int s = 0; s < m; ++s) {
    const int v = bg.edge_vars[static_cast<std::size_t>(s)];
    const auto [i, j] = bg.edge_slots[static_cast<std::size_t>(s)];
    store_.grad("emb/edge_base").row(0) += dh[static_cast<std::size_t>(v)].transpose();
    store_.grad("emb/edge_pos").row(std::min(i, P - 1)) += dh[static_cast<std::size_t>(v)].transpose();
    store_.grad("emb/edge_pos").row(std::min(j, P - 1)) += dh[static_cast<std::size_t>(v)].transpose();
  }
  for (int p = 0; p < k; ++p) {
    const int v = bg.peak_vars[static_cast<std::size_t>(p)];
    store_.grad("emb/peak") += dh[static_cast<std::size_t>(v)] * init.peak_inputs[static_cast<std::size_t>(p)].transpose();
  }
}

}  // namespace mfgn
