#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mfgn/error.hpp"
#include "mfgn/experiments.hpp"
#include "mfgn/learn.hpp"
#include "mfgn/rng.hpp"

using namespace mfgn;

namespace {

// Logits that argmax-decode to the given matrix with a solid margin.
Eigen::MatrixXd logits_for_matrix(const std::vector<std::vector<int>>& matrix, double margin = 6.0) {
  const int n = static_cast<int>(matrix.size());
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(n * (n - 1) / 2, 5);
  int s = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++s) logits(s, matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) = margin;
  return logits;
}

ModelConfig small_config(std::uint64_t seed = 5) {
  ModelConfig cfg;
  cfg.hidden_size = 8;
  cfg.rank = 3;
  cfg.iterations = 2;
  cfg.init_rounds = 1;
  cfg.k_clusters = 3;
  cfg.seed = seed;
  return cfg;
}

std::vector<MoleculeInstance> small_dataset(int count, std::uint64_t seed) {
  DatasetSpec spec;
  spec.molecule_count = count;
  spec.min_heavy = 4;
  spec.max_heavy = 7;
  spec.max_peaks = 5;
  spec.seed = seed;
  return generate_dataset(spec);
}

}  // namespace

TEST_CASE("identity is optimal when the prediction matches the label") {
  const auto inst = make_instance("CC(=O)OC", {{74, 1.0}});
  const auto logits = logits_for_matrix(inst.bond_matrix);
  const auto pm = permutation_min_loss(logits, inst);
  for (std::size_t i = 0; i < pm.permutation.size(); ++i) CHECK(pm.permutation[i] == static_cast<int>(i));
  CHECK(pm.loss == doctest::Approx(permuted_cross_entropy(logits, inst, pm.permutation)));
}

TEST_CASE("a swapped same-element pair is recovered by the permutation search") {
  // Asymmetric molecule with two carbons in distinct environments.
  const auto inst = make_instance("CCO", {{46, 1.0}});
  REQUIRE(inst.atoms[0].element == Element::C);
  REQUIRE(inst.atoms[1].element == Element::C);

  // Prediction equals the label with carbons 0 and 1 swapped.
  auto swapped = inst.bond_matrix;
  const int n = inst.num_atoms();
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y) {
      auto m = [&](int v) { return v == 0 ? 1 : (v == 1 ? 0 : v); };
      swapped[static_cast<std::size_t>(m(x))][static_cast<std::size_t>(m(y))] =
          inst.bond_matrix[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
    }
  REQUIRE(swapped != inst.bond_matrix);

  const auto logits = logits_for_matrix(swapped);
  const double identity_loss = permuted_cross_entropy(logits, inst, {0, 1, 2, 3});
  const auto pm = permutation_min_loss(logits, inst);
  CHECK(pm.loss < identity_loss - 0.5);
  // The recovered permutation undoes the swap.
  CHECK(pm.permutation[0] == 1);
  CHECK(pm.permutation[1] == 0);
}

TEST_CASE("permutation-min loss never exceeds the identity loss") {
  Rng rng(77);
  for (int rep = 0; rep < 40; ++rep) {
    const auto inst = make_instance(rep % 2 == 0 ? "CCOCC" : "CC(=O)OCC", {{40, 1.0}});
    const int m = inst.num_atoms() * (inst.num_atoms() - 1) / 2;
    Eigen::MatrixXd logits(m, 5);
    for (int s = 0; s < m; ++s)
      for (int c = 0; c < 5; ++c) logits(s, c) = rng.uniform(-2, 2);
    std::vector<int> identity(static_cast<std::size_t>(inst.num_atoms()));
    std::iota(identity.begin(), identity.end(), 0);
    const double id_loss = permuted_cross_entropy(logits, inst, identity);
    const auto pm = permutation_min_loss(logits, inst);
    CHECK(pm.loss <= id_loss + 1e-12);

    // Exhaustive search over a larger candidate set can only improve on greedy.
    const auto greedy = permutation_min_loss(logits, inst, /*perm_cap=*/1.0);
    CHECK(pm.loss <= greedy.loss + 1e-12);
  }
}

TEST_CASE("permutation loss gradient matches finite differences") {
  Rng rng(5);
  const auto inst = make_instance("CCO", {{46, 1.0}});
  const int m = inst.num_atoms() * (inst.num_atoms() - 1) / 2;
  Eigen::MatrixXd logits(m, 5);
  for (int s = 0; s < m; ++s)
    for (int c = 0; c < 5; ++c) logits(s, c) = rng.uniform(-1, 1);

  std::vector<int> identity(static_cast<std::size_t>(inst.num_atoms()));
  std::iota(identity.begin(), identity.end(), 0);
  Eigen::MatrixXd grad;
  permuted_cross_entropy(logits, inst, identity, &grad);

  const double h = 1e-6;
  for (int s = 0; s < m; ++s)
    for (int c = 0; c < 5; ++c) {
      Eigen::MatrixXd up = logits, down = logits;
      up(s, c) += h;
      down(s, c) -= h;
      const double fd = (permuted_cross_entropy(up, inst, identity) -
                         permuted_cross_entropy(down, inst, identity)) /
                        (2 * h);
      CHECK(std::abs(fd - grad(s, c)) <= 1e-6);
    }
}

TEST_CASE("molecule metrics: exact prediction and one wrong entry") {
  // 13-atom instance (12 heavy + FakeH): 78 upper-triangle entries.
  const auto inst = make_instance("CCCCCCCCC(=O)OC", {{172, 1.0}});
  REQUIRE(inst.num_atoms() == 13);

  auto logits = logits_for_matrix(inst.bond_matrix);
  auto mm = molecule_metrics(inst, logits);
  CHECK(mm.accuracy == doctest::Approx(1.0));
  CHECK(mm.atoms_satisfied == mm.atoms_total);

  // Corrupt one entry.
  logits(0, 0) = 10.0;
  logits(0, inst.bond_matrix[0][1]) = 0.0;
  REQUIRE(inst.bond_matrix[0][1] != 0);
  mm = molecule_metrics(inst, logits);
  CHECK(mm.accuracy == doctest::Approx(77.0 / 78.0));
}

TEST_CASE("all-zero baseline on a linear 13-heavy-atom ester") {
  // Heavy-only accuracy of the all-zero prediction: (78-12)/78.
  const auto inst = make_instance("CCCCCCCCCC(=O)OC", {{186, 1.0}});
  REQUIRE(inst.num_heavy() == 13);
  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(inst.num_atoms() * (inst.num_atoms() - 1) / 2, 5);
  zeros.col(0).setConstant(1.0);
  const auto mm = molecule_metrics(inst, zeros);
  CHECK(mm.accuracy_heavy == doctest::Approx(66.0 / 78.0).epsilon(1e-9)); // about 0.846
}

TEST_CASE("training with zero learning rate leaves parameters unchanged") {
  auto dataset = small_dataset(6, 11);
  Model model(small_config());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.learning_rate = 0.0;
  cfg.val_fraction = 0.0;
  cfg.seed = 3;

  // Force parameter creation, then snapshot.
  model.fit_sharing(dataset);
  model.forward(model.build(dataset[0]), dataset[0]);
  const auto before = model.params().tensors();
  train(model, dataset, cfg);
  for (const auto& [name, tensor] : model.params().tensors()) {
    auto it = before.find(name);
    if (it == before.end()) continue; // tensors created during training start at init values
    CHECK((tensor - it->second).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("training is deterministic given the seed") {
  auto dataset = small_dataset(6, 13);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 3;
  cfg.seed = 9;
  cfg.val_fraction = 0.0;

  Model a(small_config(21));
  Model b(small_config(21));
  const auto ra = train(a, dataset, cfg);
  const auto rb = train(b, dataset, cfg);
  REQUIRE(ra.log.size() == rb.log.size());
  CHECK(ra.log[0].train_loss == rb.log[0].train_loss); // bitwise equality
  CHECK(ra.log[0].val.loss == rb.log[0].val.loss);
}

TEST_CASE("a few epochs reduce the training loss on a tiny set") {
  auto dataset = small_dataset(5, 17);
  Model model(small_config(31));
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 5;
  cfg.learning_rate = 3e-3;
  cfg.val_fraction = 0.0;
  cfg.seed = 4;
  const auto result = train(model, dataset, cfg);
  REQUIRE(result.log.size() == 25);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
}

TEST_CASE("checkpoint round trip reproduces evaluation exactly") {
  auto dataset = small_dataset(4, 23);
  Model model(small_config(51));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.val_fraction = 0.0;
  cfg.seed = 6;
  train(model, dataset, cfg);

  const auto before = evaluate(model, dataset);
  const std::string json = checkpoint_to_json(model);
  Model loaded = model_from_checkpoint_json(json);
  const auto after = evaluate(loaded, dataset);
  CHECK(before.loss == after.loss);
  CHECK(before.accuracy == after.accuracy);
  CHECK(before.valence_rate == after.valence_rate);

  // Version gate.
  std::string tampered = json;
  const auto pos = tampered.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  tampered.replace(pos, 19, "\"format_version\": 2");
  CHECK_THROWS_AS(model_from_checkpoint_json(tampered), ConfigError);
}
