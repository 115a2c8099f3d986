#include <doctest.h>

#include <cmath>

#include "mfgn/error.hpp"
#include "mfgn/rng.hpp"
#include "mfgn/valence.hpp"

using namespace mfgn;

namespace {

std::vector<DiscreteDistribution> random_messages(Rng& rng, int t, int b) {
  std::vector<DiscreteDistribution> msgs;
  for (int i = 0; i < t; ++i) {
    std::vector<double> v(static_cast<std::size_t>(b) + 1);
    for (double& x : v) x = rng.uniform(0.01, 1.0);
    DiscreteDistribution d(v);
    d.normalize();
    msgs.push_back(std::move(d));
  }
  return msgs;
}

}  // namespace

TEST_CASE("dp_partial base cases") {
  DiscreteDistribution g(std::vector<double>{0.2, 0.3, 0.5});

  // Single variable: the sum collapses to g(v).
  CHECK(dp_partial({g}, 0) == doctest::Approx(0.2));
  CHECK(dp_partial({g}, 1) == doctest::Approx(0.3));
  CHECK(dp_partial({g}, 2) == doctest::Approx(0.5));
  CHECK(dp_partial({g}, 5) == doctest::Approx(0.0));

  // Empty product: 1 at v=0, 0 elsewhere; v<0 is 0.
  CHECK(dp_partial({}, 0) == doctest::Approx(1.0));
  CHECK(dp_partial({}, 1) == doctest::Approx(0.0));
  CHECK(dp_partial({g}, -1) == doctest::Approx(0.0));
}

TEST_CASE("dp_partial two-variable hand check") {
  DiscreteDistribution g1(std::vector<double>{0.5, 0.5});
  DiscreteDistribution g2(std::vector<double>{0.2, 0.8});
  // (0,1) and (1,0): 0.5*0.8 + 0.5*0.2 = 0.5
  CHECK(dp_partial({g1, g2}, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dp_partial({g1, g2}, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(dp_partial({g1, g2}, 2) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("dp_partial equals enumeration on random instances") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const int t = static_cast<int>(rng.uniform_int(1, 5));
    const int b = static_cast<int>(rng.uniform_int(1, 4));
    auto msgs = random_messages(rng, t, b);
    for (int v = 0; v <= t * b; ++v) {
      double expect = 0.0;
      std::vector<int> assign(static_cast<std::size_t>(t), 0);
      while (true) {
        int total = 0;
        double prod = 1.0;
        for (int i = 0; i < t; ++i) {
          total += assign[static_cast<std::size_t>(i)];
          prod *= msgs[static_cast<std::size_t>(i)][assign[static_cast<std::size_t>(i)]];
        }
        if (total == v) expect += prod;
        int pos = t - 1;
        while (pos >= 0 && assign[static_cast<std::size_t>(pos)] == b) {
          assign[static_cast<std::size_t>(pos)] = 0;
          --pos;
        }
        if (pos < 0) break;
        ++assign[static_cast<std::size_t>(pos)];
      }
      CHECK(dp_partial(msgs, v) == doctest::Approx(expect).epsilon(1e-10));
    }
  }
}

TEST_CASE("valence_messages two-edge hand check") {
  ValenceFactorSpec spec{1, 2, 2};
  auto out = valence_messages(spec, {DiscreteDistribution(std::vector<double>{0.5, 0.5}),
                                     DiscreteDistribution(std::vector<double>{0.2, 0.8})});
  REQUIRE(out.messages.size() == 2);
  CHECK_FALSE(out.any_unsatisfiable());
  CHECK(out.messages[0][0] == doctest::Approx(0.8));
  CHECK(out.messages[0][1] == doctest::Approx(0.2));
  // Message to the second edge depends on the first edge's (uniform) message.
  CHECK(out.messages[1][0] == doctest::Approx(0.5));
  CHECK(out.messages[1][1] == doctest::Approx(0.5));
}

TEST_CASE("valence zero target forces all edges to state 0") {
  ValenceFactorSpec spec{0, 5, 4};
  Rng rng(5);
  auto out = valence_messages(spec, random_messages(rng, 4, 4));
  for (const auto& m : out.messages) {
    CHECK(m.argmax() == 0);
    CHECK(m[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("single neighbor forces the state") {
  ValenceFactorSpec spec{2, 5, 1};
  Rng rng(7);
  auto out = brute_force_valence_messages(spec, random_messages(rng, 1, 4));
  CHECK(out.messages[0][2] == doctest::Approx(1.0));

  auto dp = valence_messages(spec, random_messages(rng, 1, 4));
  CHECK(dp.messages[0][2] == doctest::Approx(1.0));
}

TEST_CASE("uniform incoming gives identical outgoing messages") {
  ValenceFactorSpec spec{4, 5, 3};
  std::vector<DiscreteDistribution> incoming(3, DiscreteDistribution::uniform(5));
  auto out = valence_messages(spec, incoming);
  for (int i = 1; i < 3; ++i)
    for (int x = 0; x < 5; ++x)
      CHECK(out.messages[static_cast<std::size_t>(i)][x] == doctest::Approx(out.messages[0][x]).epsilon(1e-12));
}

TEST_CASE("valence_messages matches brute force on random instances") {
  Rng rng(2024);
  for (int rep = 0; rep < 300; ++rep) {
    const int t = static_cast<int>(rng.uniform_int(1, 5));
    const int b = static_cast<int>(rng.uniform_int(1, 4));
    const int v = static_cast<int>(rng.uniform_int(0, 8));
    ValenceFactorSpec spec{v, b + 1, t};
    auto msgs = random_messages(rng, t, b);
    auto fast = valence_messages(spec, msgs);
    auto slow = brute_force_valence_messages(spec, msgs);
    for (int i = 0; i < t; ++i) {
      CHECK(fast.unsatisfiable[static_cast<std::size_t>(i)] == slow.unsatisfiable[static_cast<std::size_t>(i)]);
      CHECK(fast.messages[static_cast<std::size_t>(i)].max_abs_diff(slow.messages[static_cast<std::size_t>(i)]) <= 1e-9);
    }
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(31);
  ValenceFactorSpec spec{5, 4, 4};
  auto msgs = random_messages(rng, 4, 3);
  auto base = valence_messages(spec, msgs);

  std::vector<DiscreteDistribution> swapped = {msgs[2], msgs[0], msgs[3], msgs[1]};
  auto out = valence_messages(spec, swapped);
  CHECK(out.messages[0].max_abs_diff(base.messages[2]) <= 1e-12);
  CHECK(out.messages[1].max_abs_diff(base.messages[0]) <= 1e-12);
  CHECK(out.messages[2].max_abs_diff(base.messages[3]) <= 1e-12);
  CHECK(out.messages[3].max_abs_diff(base.messages[1]) <= 1e-12);
}

TEST_CASE("prefix and suffix tables reconstruct the leave-one-out convolution") {
  Rng rng(17);
  const int t = 4, b = 2, v = 5;
  ValenceFactorSpec spec{v, b + 1, t};
  auto msgs = random_messages(rng, t, b);
  const DpTable table = build_dp_table(spec, msgs);

  for (int i = 0; i < t; ++i) {
    std::vector<DiscreteDistribution> others;
    for (int j = 0; j < t; ++j)
      if (j != i) others.push_back(msgs[static_cast<std::size_t>(j)]);

    // Reconstruction and direct DP agree up to one common scale.
    double scale = 0.0;
    bool scale_set = false;
    for (int w = 0; w <= v; ++w) {
      double recon = 0.0;
      for (int p = 0; p <= w; ++p)
        recon += table.prefix[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] *
                 table.suffix[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(w - p)];
      const double direct = dp_partial(others, w);
      if (!scale_set && direct > 1e-12) {
        scale = recon / direct;
        scale_set = true;
      }
      if (scale_set) CHECK(recon == doctest::Approx(direct * scale).epsilon(1e-9));
    }
  }
}

TEST_CASE("row renormalization does not change the normalized outputs") {
  Rng rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    const int t = static_cast<int>(rng.uniform_int(1, 5));
    const int b = static_cast<int>(rng.uniform_int(1, 4));
    const int v = static_cast<int>(rng.uniform_int(0, t * b));
    ValenceFactorSpec spec{v, b + 1, t};
    auto msgs = random_messages(rng, t, b);
    auto renorm = valence_messages(spec, msgs);
    ValenceTape tape(spec, msgs); // unnormalized rows internally
    for (int i = 0; i < t; ++i)
      CHECK(renorm.messages[static_cast<std::size_t>(i)].max_abs_diff(
                tape.outputs().messages[static_cast<std::size_t>(i)]) <= 1e-11);
  }
}

TEST_CASE("one-hot evidence is filtered exactly") {
  ValenceFactorSpec spec{4, 5, 3};
  std::vector<DiscreteDistribution> sat = {DiscreteDistribution::one_hot(5, 1),
                                           DiscreteDistribution::one_hot(5, 2),
                                           DiscreteDistribution::one_hot(5, 1)};
  auto out = valence_messages(spec, sat);
  CHECK_FALSE(out.any_unsatisfiable());
  CHECK(out.messages[0][1] == doctest::Approx(1.0));
  CHECK(out.messages[1][2] == doctest::Approx(1.0));
  CHECK(out.messages[2][1] == doctest::Approx(1.0));

  std::vector<DiscreteDistribution> unsat = {DiscreteDistribution::one_hot(5, 4),
                                             DiscreteDistribution::one_hot(5, 4),
                                             DiscreteDistribution::one_hot(5, 4)};
  auto bad = valence_messages(spec, unsat);
  CHECK(bad.any_unsatisfiable());
}

TEST_CASE("argument and capacity errors") {
  ValenceFactorSpec spec{2, 5, 3};
  CHECK_THROWS_AS(valence_messages(spec, {}), ArgumentError);

  ValenceFactorSpec big{10, 5, 12}; // 5^12 > 1e6
  std::vector<DiscreteDistribution> msgs(12, DiscreteDistribution::uniform(5));
  CHECK_THROWS_AS(brute_force_valence_messages(big, msgs), CapacityError);

  ValenceFactorSpec bad{-1, 5, 3};
  CHECK_THROWS_AS(valence_messages(bad, msgs), ArgumentError);
}

TEST_CASE("valence tape backward matches finite differences") {
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    const int t = static_cast<int>(rng.uniform_int(2, 4));
    const int b = static_cast<int>(rng.uniform_int(1, 3));
    const int v = static_cast<int>(rng.uniform_int(1, t * b - 1));
    ValenceFactorSpec spec{v, b + 1, t};
    auto msgs = random_messages(rng, t, b);

    // Random linear functional of the stacked outputs.
    std::vector<std::vector<double>> dout(static_cast<std::size_t>(t),
                                          std::vector<double>(static_cast<std::size_t>(b) + 1));
    for (auto& row : dout)
      for (double& x : row) x = rng.uniform(-1.0, 1.0);

    ValenceTape tape(spec, msgs);
    if (tape.outputs().any_unsatisfiable()) continue;
    auto grad = tape.backward(dout);

    auto objective = [&](const std::vector<DiscreteDistribution>& input) {
      ValenceTape tp(spec, input);
      double acc = 0.0;
      for (int i = 0; i < t; ++i)
        for (int x = 0; x <= b; ++x)
          acc += dout[static_cast<std::size_t>(i)][static_cast<std::size_t>(x)] *
                 tp.outputs().messages[static_cast<std::size_t>(i)][x];
      return acc;
    };

    const double h = 1e-6;
    for (int i = 0; i < t; ++i) {
      for (int x = 0; x <= b; ++x) {
        auto plus = msgs;
        auto minus = msgs;
        plus[static_cast<std::size_t>(i)][x] += h;
        minus[static_cast<std::size_t>(i)][x] -= h;
        const double fd = (objective(plus) - objective(minus)) / (2 * h);
        const double an = grad[static_cast<std::size_t>(i)][static_cast<std::size_t>(x)];
        CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}
