#include <doctest.h>

#include <cstring>

#include "mfgn/error.hpp"
#include "mfgn/lbp.hpp"
#include "oracles.hpp"

using namespace mfgn;
using mfgn::testing::exact_marginals;
using mfgn::testing::random_tree_graph;

namespace {

FactorGraph two_factor_chain() {
  // x0 with two incident pairwise factors to x1 and x2.
  FactorGraph g;
  g.add_variable(2);
  g.add_variable(2);
  g.add_variable(2);
  g.add_factor({0, 1}, FactorKind::DenseTable, DenseTablePayload{{1, 1, 1, 1}});
  g.add_factor({0, 2}, FactorKind::DenseTable, DenseTablePayload{{1, 1, 1, 1}});
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{1, 1}});
  return g;
}

}  // namespace

TEST_CASE("variable_to_factor_message with a single neighbor is uniform") {
  FactorGraph g;
  g.add_variable(3);
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{1, 2, 3}});
  auto store = MessageStore::uniform_init(g);
  auto msg = variable_to_factor_message(g, store, 0, 0);
  for (int x = 0; x < 3; ++x) CHECK(msg[x] == doctest::Approx(1.0 / 3));
}

TEST_CASE("variable_to_factor_message multiplies the other incoming messages") {
  FactorGraph g = two_factor_chain();
  auto store = MessageStore::uniform_init(g);
  // Factors 1 and 2 send to x0; ask for the message to factor 0... factor ids:
  // 0:{0,1}, 1:{0,2}, 2:{0}. Message to factor 0 uses factors 1 and 2.
  store.factor_to_var[1][0] = DiscreteDistribution(std::vector<double>{0.5, 0.5});
  store.factor_to_var[2][0] = DiscreteDistribution(std::vector<double>{0.2, 0.8});
  auto msg = variable_to_factor_message(g, store, 0, 0);
  CHECK(msg[0] == doctest::Approx(0.2));
  CHECK(msg[1] == doctest::Approx(0.8));
  CHECK(std::abs(msg.sum() - 1.0) <= 1e-12);
}

TEST_CASE("variable_to_factor_message rejects non-adjacent pairs") {
  FactorGraph g = two_factor_chain();
  auto store = MessageStore::uniform_init(g);
  CHECK_THROWS_AS(variable_to_factor_message(g, store, 1, 1), AdjacencyError);
}

TEST_CASE("dense factor over one variable returns its normalized table") {
  FactorGraph g;
  g.add_variable(2);
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{1, 3}});
  auto store = MessageStore::uniform_init(g);
  auto msg = dense_factor_to_variable_message(g, store, 0, 0);
  CHECK(msg[0] == doctest::Approx(0.25));
  CHECK(msg[1] == doctest::Approx(0.75));
}

TEST_CASE("dense identity factor forwards the incoming message") {
  FactorGraph g;
  g.add_variable(2);
  g.add_variable(2);
  // f(x,y) = I(x == y), row-major with y varying fastest.
  g.add_factor({0, 1}, FactorKind::DenseTable, DenseTablePayload{{1, 0, 0, 1}});
  auto store = MessageStore::uniform_init(g);
  store.var_to_factor[0][1] = DiscreteDistribution(std::vector<double>{0.3, 0.7});
  auto msg = dense_factor_to_variable_message(g, store, 0, 0);
  CHECK(msg[0] == doctest::Approx(0.3));
  CHECK(msg[1] == doctest::Approx(0.7));
}

TEST_CASE("symmetric table with uniform incoming gives uniform output") {
  FactorGraph g;
  g.add_variable(3);
  g.add_variable(3);
  std::vector<double> table(9, 0.0);
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y) table[static_cast<std::size_t>(3 * x + y)] = (x == y) ? 2.0 : 0.5;
  g.add_factor({0, 1}, FactorKind::DenseTable, DenseTablePayload{table});
  auto store = MessageStore::uniform_init(g);
  auto msg = dense_factor_to_variable_message(g, store, 0, 0);
  for (int x = 0; x < 3; ++x) CHECK(msg[x] == doctest::Approx(1.0 / 3));
}

TEST_CASE("dense factor capacity cap") {
  FactorGraph g;
  g.add_variable(10);
  g.add_variable(10);
  g.add_variable(10);
  std::vector<double> table(1000, 1.0);
  g.add_factor({0, 1, 2}, FactorKind::DenseTable, DenseTablePayload{table});
  auto store = MessageStore::uniform_init(g);
  CHECK_THROWS_AS(dense_factor_to_variable_message(g, store, 0, 0, 100.0), CapacityError);
}

TEST_CASE("run_lbp with no factors returns normalized unaries") {
  FactorGraph g;
  g.add_variable(3, VarKind::Atom, DiscreteDistribution(std::vector<double>{1, 2, 1}));
  g.add_variable(2, VarKind::Atom, DiscreteDistribution(std::vector<double>{3, 1}));
  auto result = run_lbp(g, BPSchedule{});
  CHECK(result.converged);
  CHECK(result.beliefs[0][1] == doctest::Approx(0.5));
  CHECK(result.beliefs[1][0] == doctest::Approx(0.75));
}

TEST_CASE("run_lbp matches exact marginals on random trees") {
  Rng rng(7);
  BPSchedule schedule;
  schedule.max_iterations = 60;
  schedule.convergence_tol = 1e-13;
  for (int rep = 0; rep < 30; ++rep) {
    FactorGraph g = random_tree_graph(rng);
    auto expect = exact_marginals(g);
    auto result = run_lbp(g, schedule);
    for (int i = 0; i < g.num_variables(); ++i)
      CHECK(result.beliefs[static_cast<std::size_t>(i)].max_abs_diff(expect[static_cast<std::size_t>(i)]) <= 1e-9);
  }
}

TEST_CASE("damping reaches the same fixed point on trees") {
  Rng rng(21);
  FactorGraph g = random_tree_graph(rng);
  BPSchedule plain;
  plain.max_iterations = 80;
  plain.convergence_tol = 1e-13;
  BPSchedule damped = plain;
  damped.damping = 0.3;

  auto a = run_lbp(g, plain);
  auto b = run_lbp(g, damped);
  for (int i = 0; i < g.num_variables(); ++i)
    CHECK(a.beliefs[static_cast<std::size_t>(i)].max_abs_diff(b.beliefs[static_cast<std::size_t>(i)]) <= 1e-6);
}

TEST_CASE("scaling a factor table does not change the beliefs") {
  Rng rng(33);
  FactorGraph g = random_tree_graph(rng);
  BPSchedule schedule;
  schedule.max_iterations = 60;
  schedule.convergence_tol = 1e-13;
  auto base = run_lbp(g, schedule);

  // Rebuild with the first factor's table multiplied by a constant.
  FactorGraph g2;
  for (const auto& v : g.variables()) g2.add_variable(v.domain_size, v.kind, v.unary_potential);
  for (const auto& f : g.factors()) {
    auto payload = std::get<DenseTablePayload>(f.payload);
    if (f.id == 0)
      for (double& t : payload.table) t *= 137.5;
    g2.add_factor(f.neighbors, f.kind, payload);
  }
  auto result = run_lbp(g2, schedule);
  for (int i = 0; i < g.num_variables(); ++i)
    CHECK(base.beliefs[static_cast<std::size_t>(i)].max_abs_diff(result.beliefs[static_cast<std::size_t>(i)]) <= 1e-9);
}

TEST_CASE("identical runs produce bit-identical beliefs") {
  Rng rng(55);
  FactorGraph g = random_tree_graph(rng);
  BPSchedule schedule;
  schedule.max_iterations = 25;
  auto a = run_lbp(g, schedule);
  auto b = run_lbp(g, schedule);
  REQUIRE(a.beliefs.size() == b.beliefs.size());
  for (std::size_t i = 0; i < a.beliefs.size(); ++i) {
    REQUIRE(a.beliefs[i].values.size() == b.beliefs[i].values.size());
    CHECK(std::memcmp(a.beliefs[i].values.data(), b.beliefs[i].values.data(),
                      a.beliefs[i].values.size() * sizeof(double)) == 0);
  }
  CHECK(a.iterations == b.iterations);
  CHECK(a.final_delta == b.final_delta);
}

TEST_CASE("contradictory hard evidence falls back to uniform with a count") {
  // Two one-variable factors that contradict each other: product is zero.
  FactorGraph g;
  g.add_variable(2);
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{1, 0}});
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{0, 1}});
  auto result = run_lbp(g, BPSchedule{});
  CHECK(result.degenerate_fallbacks > 0);
  for (double v : result.beliefs[0].values) CHECK(std::isfinite(v));
}

TEST_CASE("valence factor participates in LBP and matches enumeration") {
  // Three bond variables tied to one valence-2 constraint plus biased unaries.
  FactorGraph g;
  for (int i = 0; i < 3; ++i)
    g.add_variable(3, VarKind::Edge, DiscreteDistribution(std::vector<double>{1.0, 1.0 + i, 2.0}));
  g.add_factor({0, 1, 2}, FactorKind::TypeA, ValencePayload{ValenceFactorSpec{2, 3, 3}});

  BPSchedule schedule;
  schedule.max_iterations = 50;
  schedule.convergence_tol = 1e-13;
  auto result = run_lbp(g, schedule);
  auto expect = exact_marginals(g);
  for (int i = 0; i < 3; ++i)
    CHECK(result.beliefs[static_cast<std::size_t>(i)].max_abs_diff(expect[static_cast<std::size_t>(i)]) <= 1e-9);
}

TEST_CASE("graph validation catches inconsistencies") {
  FactorGraph g;
  g.add_variable(2);
  CHECK_THROWS_AS(g.add_factor({0, 0}, FactorKind::DenseTable, DenseTablePayload{{1, 1, 1, 1}}),
                  ArgumentError);
  CHECK_THROWS_AS(g.add_factor({5}, FactorKind::DenseTable, DenseTablePayload{{1, 1}}), ArgumentError);
  g.add_factor({0}, FactorKind::DenseTable, DenseTablePayload{{1, 1, 1}}); // wrong table size
  CHECK_THROWS_AS(g.validate(), ArgumentError);
}
