#include <doctest.h>

#include "mfgn/distribution.hpp"
#include "mfgn/error.hpp"

using namespace mfgn;

TEST_CASE("normalize produces a unit-sum vector") {
  DiscreteDistribution d(std::vector<double>{0.1, 0.4});
  d.normalize();
  CHECK(d[0] == doctest::Approx(0.2));
  CHECK(d[1] == doctest::Approx(0.8));
  CHECK(std::abs(d.sum() - 1.0) <= 1e-12);
}

TEST_CASE("normalize rejects bad inputs") {
  DiscreteDistribution zero(std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(zero.normalize(), DegenerateMessageError);

  DiscreteDistribution neg(std::vector<double>{-0.1, 0.5});
  CHECK_THROWS_AS(neg.normalize(), ArgumentError);

  DiscreteDistribution empty;
  CHECK_THROWS_AS(empty.normalize(), ArgumentError);
}

TEST_CASE("uniform and one_hot constructors") {
  auto u = DiscreteDistribution::uniform(4);
  CHECK(u.size() == 4);
  CHECK(u[2] == doctest::Approx(0.25));

  auto h = DiscreteDistribution::one_hot(5, 3);
  CHECK(h.argmax() == 3);
  CHECK(h.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(DiscreteDistribution::one_hot(3, 5), ArgumentError);
}
