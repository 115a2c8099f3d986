// Command-line driver: synthetic data generation, noise-decoding
// experiments, training, evaluation, ablations and oracle self-checks.

#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfgn/error.hpp"
#include "mfgn/experiments.hpp"
#include "mfgn/lbp.hpp"
#include "mfgn/learn.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mfgn::ConfigError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mfgn::Error("cannot open output file: " + path);
  out << content;
}

struct AppConfig {
  mfgn::DatasetSpec dataset;
  mfgn::ModelConfig model;
  mfgn::TrainConfig train;
  std::vector<double> decode_betas = {0.1, 0.2, 0.5, 1.0, 2.0};
  int decode_trials = 5;
  int decode_rounds = 1;
  std::uint64_t decode_seed = 1;
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

AppConfig load_config(const std::string& path) {
  AppConfig cfg;
  if (path.empty()) return cfg;
  const json j = json::parse(read_file(path));

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    maybe(d, "molecules", cfg.dataset.molecule_count);
    maybe(d, "min_heavy", cfg.dataset.min_heavy);
    maybe(d, "max_heavy", cfg.dataset.max_heavy);
    maybe(d, "ester", cfg.dataset.ester);
    maybe(d, "max_peaks", cfg.dataset.max_peaks);
    maybe(d, "ring_prob", cfg.dataset.ring_prob);
    maybe(d, "double_bond_prob", cfg.dataset.double_bond_prob);
    maybe(d, "triple_bond_prob", cfg.dataset.triple_bond_prob);
    maybe(d, "seed", cfg.dataset.seed);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    maybe(m, "hidden_size", cfg.model.hidden_size);
    maybe(m, "rank", cfg.model.rank);
    maybe(m, "iterations", cfg.model.iterations);
    maybe(m, "init_rounds", cfg.model.init_rounds);
    maybe(m, "mlp_layers", cfg.model.mlp_layers);
    if (m.contains("activation"))
      cfg.model.activation = m.at("activation").get<std::string>() == "relu" ? mfgn::Activation::ReLU
                                                                             : mfgn::Activation::Tanh;
    if (m.contains("sharing_b"))
      cfg.model.sharing_b = mfgn::sharing_level_from_string(m.at("sharing_b").get<std::string>());
    if (m.contains("sharing_c"))
      cfg.model.sharing_c = mfgn::sharing_level_from_string(m.at("sharing_c").get<std::string>());
    maybe(m, "k_clusters", cfg.model.k_clusters);
    maybe(m, "valence_bridge", cfg.model.valence_bridge);
    maybe(m, "bc_factors", cfg.model.bc_factors);
    maybe(m, "max_atoms", cfg.model.max_atoms);
    maybe(m, "seed", cfg.model.seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    maybe(t, "epochs", cfg.train.epochs);
    maybe(t, "batch_size", cfg.train.batch_size);
    maybe(t, "learning_rate", cfg.train.learning_rate);
    if (t.contains("optimizer"))
      cfg.train.optimizer = t.at("optimizer").get<std::string>() == "sgd"
                                ? mfgn::TrainConfig::Optimizer::Sgd
                                : mfgn::TrainConfig::Optimizer::Adam;
    maybe(t, "val_fraction", cfg.train.val_fraction);
    maybe(t, "perm_cap", cfg.train.perm_cap);
    maybe(t, "seed", cfg.train.seed);
  }
  if (j.contains("decode")) {
    const auto& d = j.at("decode");
    maybe(d, "betas", cfg.decode_betas);
    maybe(d, "trials", cfg.decode_trials);
    maybe(d, "rounds", cfg.decode_rounds);
    maybe(d, "seed", cfg.decode_seed);
  }
  return cfg;
}

std::map<std::string, std::string> model_config_echo(const mfgn::ModelConfig& m) {
  return {
      {"hidden_size", std::to_string(m.hidden_size)},
      {"rank", std::to_string(m.rank)},
      {"iterations", std::to_string(m.iterations)},
      {"sharing_b", mfgn::to_string(m.sharing_b)},
      {"sharing_c", mfgn::to_string(m.sharing_c)},
      {"seed", std::to_string(m.seed)},
  };
}

int cmd_gen_data(const AppConfig& cfg, const std::string& out_path) {
  const auto dataset = mfgn::generate_dataset(cfg.dataset);
  const std::string text = mfgn::dataset_to_jsonl(dataset);
  write_file(out_path, text);
  std::cout << "wrote " << dataset.size() << " molecules to " << out_path << " (hash "
            << mfgn::git_blob_sha1(text).substr(0, 12) << ")\n";
  return 0;
}

int cmd_decode_noise(const AppConfig& cfg, const std::string& data_path, const std::string& out_path) {
  const std::string text = read_file(data_path);
  const auto dataset = mfgn::dataset_from_jsonl(text);
  const auto rows = mfgn::noise_decode_table(dataset, cfg.decode_betas, cfg.decode_trials,
                                             cfg.decode_rounds, cfg.decode_seed);
  std::map<std::string, std::string> echo = {
      {"trials", std::to_string(cfg.decode_trials)},
      {"rounds", std::to_string(cfg.decode_rounds)},
      {"seed", std::to_string(cfg.decode_seed)},
  };
  const std::string report = mfgn::report_to_json("noise-decode", echo, mfgn::git_blob_sha1(text), rows);
  if (!out_path.empty()) write_file(out_path, report);

  std::cout << "beta      initial            sum                multiply\n";
  for (std::size_t i = 0; i + 2 < rows.size() + 1; i += 3) {
    std::printf("%-8.3g  (%.3f, v %.3f)   (%.3f, v %.3f)   (%.3f, v %.3f)\n", rows[i].beta,
                rows[i].accuracy, rows[i].valence_rate, rows[i + 1].accuracy, rows[i + 1].valence_rate,
                rows[i + 2].accuracy, rows[i + 2].valence_rate);
  }
  return 0;
}

int cmd_train(AppConfig cfg, const std::string& data_path, const std::string& out_path,
              const std::string& log_path) {
  const auto dataset = mfgn::read_dataset(data_path);
  mfgn::Model model(cfg.model);
  const auto result = mfgn::train(model, dataset, cfg.train);
  if (!out_path.empty()) mfgn::save_checkpoint(model, out_path);

  json log = json::array();
  for (const auto& e : result.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_loss", e.val.loss},
                   {"val_accuracy", e.val.accuracy},
                   {"val_valence_rate", e.val.valence_rate}});
  json j = {{"kind", "train-log"},
            {"best_epoch", result.best_epoch},
            {"aborted", result.aborted},
            {"epochs", std::move(log)}};
  if (!log_path.empty()) write_file(log_path, j.dump(2));

  for (const auto& e : result.log)
    std::printf("epoch %3d  train loss %.4f  val loss %.4f  val acc %.4f  valence %.4f\n", e.epoch,
                e.train_loss, e.val.loss, e.val.accuracy, e.val.valence_rate);
  if (result.aborted) std::cout << "training aborted on non-finite loss; restored last good checkpoint\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& out_path) {
  mfgn::Model model = mfgn::load_checkpoint(model_path);
  const std::string text = read_file(data_path);
  const auto dataset = mfgn::dataset_from_jsonl(text);
  const auto rec = mfgn::evaluate(model, dataset);
  const double baseline = mfgn::all_zero_accuracy(dataset);

  json j = {{"kind", "eval-report"},
            {"config", model_config_echo(model.config())},
            {"dataset_hash", mfgn::git_blob_sha1(text)},
            {"loss", rec.loss},
            {"accuracy", rec.accuracy},
            {"accuracy_heavy", rec.accuracy_heavy},
            {"valence_rate", rec.valence_rate},
            {"all_zero_accuracy", baseline}};
  if (!out_path.empty()) write_file(out_path, j.dump(2));
  std::printf("loss %.4f  accuracy %.4f (heavy %.4f)  valence %.4f  all-zero baseline %.4f\n", rec.loss,
              rec.accuracy, rec.accuracy_heavy, rec.valence_rate, baseline);
  return 0;
}

int cmd_ablate(const std::string& low_path, const std::string& medium_path, const std::string& high_path,
               const std::string& data_path, const std::string& out_path) {
  const std::string text = read_file(data_path);
  const auto dataset = mfgn::dataset_from_jsonl(text);

  std::map<std::string, mfgn::Model*> models;
  std::optional<mfgn::Model> low, medium, high;
  medium.emplace(mfgn::load_checkpoint(medium_path));
  models["medium"] = &*medium;
  if (!low_path.empty()) {
    low.emplace(mfgn::load_checkpoint(low_path));
    models["low"] = &*low;
  }
  if (!high_path.empty()) {
    high.emplace(mfgn::load_checkpoint(high_path));
    models["high"] = &*high;
  }

  const auto rows = mfgn::run_ablations(models, dataset);
  const std::string report = mfgn::ablation_report_to_json(model_config_echo(medium->config()),
                                                           mfgn::git_blob_sha1(text), rows);
  if (!out_path.empty()) write_file(out_path, report);
  for (const auto& r : rows)
    std::printf("%-20s accuracy %.4f  valence %.4f\n", r.name.c_str(), r.metrics.accuracy,
                r.metrics.valence_rate);
  return 0;
}

int cmd_oracle_check(std::uint64_t seed) {
  bool all_ok = true;

  // Valence DP against brute-force enumeration.
  {
    mfgn::Rng rng(seed);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
      const int t = static_cast<int>(rng.uniform_int(1, 5));
      const int b = static_cast<int>(rng.uniform_int(1, 4));
      const int v = static_cast<int>(rng.uniform_int(0, 8));
      std::vector<mfgn::DiscreteDistribution> msgs;
      for (int i = 0; i < t; ++i) {
        std::vector<double> m(static_cast<std::size_t>(b) + 1);
        for (double& x : m) x = rng.uniform(0.01, 1.0);
        mfgn::DiscreteDistribution d(m);
        d.normalize();
        msgs.push_back(std::move(d));
      }
      const mfgn::ValenceFactorSpec spec{v, b + 1, t};
      const auto fast = mfgn::valence_messages(spec, msgs);
      const auto slow = mfgn::brute_force_valence_messages(spec, msgs);
      for (int i = 0; i < t; ++i)
        worst = std::max(worst, fast.messages[static_cast<std::size_t>(i)].max_abs_diff(
                                    slow.messages[static_cast<std::size_t>(i)]));
    }
    const bool ok = worst <= 1e-9;
    all_ok = all_ok && ok;
    std::printf("[%s] valence DP vs brute force (1000 cases, max err %.2e)\n", ok ? "PASS" : "FAIL", worst);
  }

  // Low-rank messages against dense marginalization on CP-composed tables.
  {
    mfgn::Rng rng(seed + 1);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      const int arity = static_cast<int>(rng.uniform_int(2, 3));
      const int rank = static_cast<int>(rng.uniform_int(1, 4));
      mfgn::LowRankFactorParams params;
      params.rank = rank;
      mfgn::FactorGraph g;
      std::vector<int> domains, ids;
      for (int s = 0; s < arity; ++s) {
        const int d = static_cast<int>(rng.uniform_int(2, 5));
        domains.push_back(d);
        ids.push_back(g.add_variable(d));
        Eigen::MatrixXd w(d, rank);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < rank; ++j) w(i, j) = rng.uniform(0.05, 1.0);
        params.weights.push_back(w);
      }
      std::size_t total = 1;
      for (int d : domains) total *= static_cast<std::size_t>(d);
      std::vector<double> table(total, 0.0);
      for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        std::vector<int> assign(static_cast<std::size_t>(arity));
        for (int s = arity - 1; s >= 0; --s) {
          assign[static_cast<std::size_t>(s)] = static_cast<int>(rem % static_cast<std::size_t>(domains[static_cast<std::size_t>(s)]));
          rem /= static_cast<std::size_t>(domains[static_cast<std::size_t>(s)]);
        }
        double acc = 0.0;
        for (int r = 0; r < rank; ++r) {
          double prod = 1.0;
          for (int s = 0; s < arity; ++s) prod *= params.weights[static_cast<std::size_t>(s)](assign[static_cast<std::size_t>(s)], r);
          acc += prod;
        }
        table[flat] = acc;
      }
      g.add_factor(ids, mfgn::FactorKind::DenseTable, mfgn::DenseTablePayload{table});

      auto store = mfgn::MessageStore::uniform_init(g);
      std::vector<Eigen::VectorXd> incoming(static_cast<std::size_t>(arity));
      for (int s = 0; s < arity; ++s) {
        Eigen::VectorXd msg(domains[static_cast<std::size_t>(s)]);
        for (int x = 0; x < domains[static_cast<std::size_t>(s)]; ++x) msg(x) = rng.uniform(0.01, 1.0);
        msg /= msg.sum();
        incoming[static_cast<std::size_t>(s)] = msg;
        store.var_to_factor[0][static_cast<std::size_t>(s)] =
            mfgn::DiscreteDistribution(std::vector<double>(msg.data(), msg.data() + msg.size()));
      }
      for (int target = 0; target < arity; ++target) {
        const auto dense = mfgn::dense_factor_to_variable_message(g, store, 0, target);
        Eigen::VectorXd raw = mfgn::lowrank_message(params, incoming, target);
        raw /= raw.sum();
        for (int x = 0; x < domains[static_cast<std::size_t>(target)]; ++x)
          worst = std::max(worst, std::abs(dense[x] - raw(x)));
      }
    }
    const bool ok = worst <= 1e-8;
    all_ok = all_ok && ok;
    std::printf("[%s] low-rank vs dense messages on CP tables (200 cases, max err %.2e)\n",
                ok ? "PASS" : "FAIL", worst);
  }

  // Permutation-min loss never beats a larger search set.
  {
    mfgn::Rng rng(seed + 2);
    bool ok = true;
    const auto inst = mfgn::make_instance("CC(=O)OCC", {{88, 1.0}});
    const int m = inst.num_atoms() * (inst.num_atoms() - 1) / 2;
    std::vector<int> identity(static_cast<std::size_t>(inst.num_atoms()));
    std::iota(identity.begin(), identity.end(), 0);
    for (int rep = 0; rep < 200; ++rep) {
      Eigen::MatrixXd logits(m, 5);
      for (int s = 0; s < m; ++s)
        for (int c = 0; c < 5; ++c) logits(s, c) = rng.uniform(-2, 2);
      const double id_loss = mfgn::permuted_cross_entropy(logits, inst, identity);
      const auto pm = mfgn::permutation_min_loss(logits, inst);
      if (pm.loss > id_loss + 1e-12) ok = false;
    }
    all_ok = all_ok && ok;
    std::printf("[%s] permutation-min loss <= identity loss (200 cases)\n", ok ? "PASS" : "FAIL");
  }

  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Molecule factor-graph network toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, model_path, log_path;
  std::string low_path, medium_path, high_path, sharing;
  std::optional<std::uint64_t> seed_flag;
  std::optional<double> beta_flag;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic molecule dataset (JSONL)");
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--out", out_path, "Output dataset path")->required();
  gen->add_option("--seed", seed_flag, "Override dataset seed");

  auto* dec = app.add_subcommand("decode-noise", "Valence-factor noise decoding experiment");
  dec->add_option("--config", config_path, "JSON config file");
  dec->add_option("--data", data_path, "Dataset JSONL")->required();
  dec->add_option("--out", out_path, "Report JSON path");
  dec->add_option("--seed", seed_flag, "Override decode seed");
  dec->add_option("--beta", beta_flag, "Run a single beta instead of the config list");

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--config", config_path, "JSON config file");
  tr->add_option("--data", data_path, "Training dataset JSONL")->required();
  tr->add_option("--out", out_path, "Checkpoint output path");
  tr->add_option("--log", log_path, "Per-epoch metrics JSON path");
  tr->add_option("--seed", seed_flag, "Override model+train seed");
  tr->add_option("--sharing", sharing, "Sharing level for both factor types")
      ->check(CLI::IsMember({"low", "medium", "high"}));

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--model", model_path, "Checkpoint path")->required();
  ev->add_option("--data", data_path, "Dataset JSONL")->required();
  ev->add_option("--out", out_path, "Report JSON path");

  auto* ab = app.add_subcommand("ablate", "Evaluate sharing variants and factor ablations");
  ab->add_option("--model-medium", medium_path, "Medium-sharing checkpoint")->required();
  ab->add_option("--model-low", low_path, "Low-sharing checkpoint");
  ab->add_option("--model-high", high_path, "High-sharing checkpoint");
  ab->add_option("--data", data_path, "Test dataset JSONL")->required();
  ab->add_option("--out", out_path, "Report JSON path");

  auto* oc = app.add_subcommand("oracle-check", "Run built-in oracle comparisons");
  oc->add_option("--seed", seed_flag, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    AppConfig cfg = load_config(config_path);
    if (gen->parsed()) {
      if (seed_flag) cfg.dataset.seed = *seed_flag;
      return cmd_gen_data(cfg, out_path);
    }
    if (dec->parsed()) {
      if (seed_flag) cfg.decode_seed = *seed_flag;
      if (beta_flag) cfg.decode_betas = {*beta_flag};
      return cmd_decode_noise(cfg, data_path, out_path);
    }
    if (tr->parsed()) {
      if (seed_flag) {
        cfg.model.seed = *seed_flag;
        cfg.train.seed = *seed_flag;
      }
      if (!sharing.empty()) {
        cfg.model.sharing_b = mfgn::sharing_level_from_string(sharing);
        cfg.model.sharing_c = mfgn::sharing_level_from_string(sharing);
      }
      return cmd_train(cfg, data_path, out_path, log_path);
    }
    if (ev->parsed()) return cmd_eval(model_path, data_path, out_path);
    if (ab->parsed()) return cmd_ablate(low_path, medium_path, high_path, data_path, out_path);
    if (oc->parsed()) return cmd_oracle_check(seed_flag.value_or(1));
    return 2;
  } catch (const mfgn::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const mfgn::ParseError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const mfgn::ValenceError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const mfgn::ArgumentError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
