#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "facever/error.hpp"
#include "facever/features.hpp"
#include "facever/similarity.hpp"
#include "support/oracles.hpp"
#include "support/random.hpp"

using namespace facever;
using facever::testing::random_vector;

TEST_CASE("distance kinds round-trip through their names") {
  for (auto kind : kAllDistances) CHECK(parse_distance(to_string(kind)) == kind);
  CHECK(to_string(DistanceKind::chebychev) == "chebychev");
  CHECK_THROWS_AS(parse_distance("Cosine"), ConfigError);
  CHECK_THROWS_AS(parse_distance("mahalanobis"), ConfigError);
}

TEST_CASE("hand-computed distances") {
  const std::vector<double> o{0, 0}, p{3, 4};
  CHECK(distance(DistanceKind::euclidean, o, p) == doctest::Approx(5.0));
  CHECK(distance(DistanceKind::cityblock, o, p) == doctest::Approx(7.0));
  CHECK(distance(DistanceKind::chebychev, o, p) == doctest::Approx(4.0));
  const std::vector<double> x{1, -2, 0.5}, twice{2, -4, 1};
  CHECK(std::abs(distance(DistanceKind::cosine, x, twice)) < 1e-15);
  const std::vector<double> a{1, 0}, b{0, 1};
  CHECK(distance(DistanceKind::cosine, a, b) == doctest::Approx(1.0));
  const std::vector<double> up{1, 2, 3}, down{3, 2, 1};
  CHECK(distance(DistanceKind::correlation, up, down) == doctest::Approx(2.0));
  CHECK(distance(DistanceKind::spearman, up, down) == doctest::Approx(2.0));
}

TEST_CASE("every distance matches the loop oracle on random pairs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = facever::testing::uniform_index(rng, 2, 40);
    auto x = random_vector(n, rng), y = random_vector(n, rng);
    for (auto kind : kAllDistances) {
      const double expected = facever::testing::naive_distance(to_string(kind), x, y);
      CHECK(std::abs(distance(kind, x, y) - expected) < 1e-10);
    }
  }
}

TEST_CASE("spearman with ties matches the counting-rank oracle") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = facever::testing::uniform_index(rng, 3, 30);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(facever::testing::uniform_index(rng, 0, 5));
      y[i] = static_cast<double>(facever::testing::uniform_index(rng, 0, 5));
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }))
      continue;
    const auto rx = average_ranks(x);
    const auto ox = facever::testing::sorted_ranks(x);
    for (std::size_t i = 0; i < n; ++i) CHECK(rx[i] == doctest::Approx(ox[i]).epsilon(1e-15));
    CHECK(std::abs(distance(DistanceKind::spearman, x, y) -
                   facever::testing::naive_distance("spearman", x, y)) < 1e-10);
  }
}

TEST_CASE("self distance is zero and all kinds are symmetric") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_vector(16, rng), y = random_vector(16, rng);
    for (auto kind : kAllDistances) {
      CHECK(std::abs(distance(kind, x, x)) < 1e-12);
      const double d1 = distance(kind, x, y), d2 = distance(kind, y, x);
      if (kind == DistanceKind::euclidean || kind == DistanceKind::cityblock ||
          kind == DistanceKind::chebychev) {
        CHECK(d1 == d2);
      } else {
        CHECK(std::abs(d1 - d2) < 1e-12);
      }
    }
  }
}

TEST_CASE("cosine of z-scored vectors is correlation") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_vector(32, rng, -3, 5), y = random_vector(32, rng, 0, 1);
    const double lhs = distance(DistanceKind::cosine, zscore(x), zscore(y));
    CHECK(std::abs(lhs - distance(DistanceKind::correlation, x, y)) < 1e-10);
  }
}

TEST_CASE("degenerate and mismatched inputs are rejected") {
  const std::vector<double> zero{0, 0, 0}, flat{2, 2, 2}, x{1, 2, 3}, shorter{1, 2};
  CHECK_THROWS_AS(distance(DistanceKind::cosine, zero, x), DegenerateInput);
  CHECK_THROWS_AS(distance(DistanceKind::correlation, flat, x), DegenerateInput);
  CHECK_THROWS_AS(distance(DistanceKind::spearman, x, flat), DegenerateInput);
  CHECK_NOTHROW(distance(DistanceKind::euclidean, zero, flat));
  for (auto kind : kAllDistances) {
    CHECK_THROWS_AS(distance(kind, x, shorter), DimensionError);
    CHECK_THROWS_AS(distance(kind, std::vector<double>{}, std::vector<double>{}), DimensionError);
  }
}
