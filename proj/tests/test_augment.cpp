#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ltr/augment.hpp"

using namespace ltr;

TEST_CASE("zeroing p=0 is the identity") {
  Tensor x(3, 4);
  for (size_t i = 0; i < x.size(); ++i) x.data()[i] = 1.0 + i;
  Rng rng(1);
  Tensor y = augment(x, AugmentSpec{AugmentSpec::Kind::zeroing, 0.0}, rng);
  CHECK(y.data() == x.data());
}

TEST_CASE("zeroing only ever writes zeros and hits the configured rate") {
  const int n = 1000, d = 1000;  // 10^6 coordinates
  Tensor x(n, d, 2.5);
  Rng rng(7);
  Tensor y = augment(x, AugmentSpec{AugmentSpec::Kind::zeroing, 0.5}, rng);
  size_t zeroed = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    CHECK((y.data()[i] == 0.0 || y.data()[i] == 2.5));
    zeroed += y.data()[i] == 0.0;
  }
  double frac = static_cast<double>(zeroed) / y.size();
  CHECK(std::abs(frac - 0.5) < 0.002);
}

TEST_CASE("gaussian noise has the right first two moments") {
  const int n = 1000, d = 1000;
  Tensor x(n, d, 0.0);
  Rng rng(11);
  Tensor y = augment(x, AugmentSpec{AugmentSpec::Kind::gaussian, 1.0}, rng);
  double mean = 0.0;
  for (double v : y.data()) {
    CHECK(std::isfinite(v));
    mean += v;
  }
  mean /= y.size();
  double var = 0.0;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  var /= y.size();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("make_positive_pair") {
  Tensor x(8, 16, 1.0);
  SUBCASE("p=0 zeroing gives two copies of the input") {
    Rng rng(3);
    auto [v0, v1] =
        make_positive_pair(x, AugmentSpec{AugmentSpec::Kind::zeroing, 0.0}, rng);
    CHECK(v0.data() == x.data());
    CHECK(v1.data() == x.data());
  }
  SUBCASE("seeded rng reproduces the pair") {
    AugmentSpec spec{AugmentSpec::Kind::gaussian, 1.0};
    Rng r1(42), r2(42);
    auto [a0, a1] = make_positive_pair(x, spec, r1);
    auto [b0, b1] = make_positive_pair(x, spec, r2);
    CHECK(a0.data() == b0.data());
    CHECK(a1.data() == b1.data());
    CHECK(a0.data() != a1.data());  // independent draws with prob 1
  }
  SUBCASE("views differ in about 2p(1-p)*n coordinates") {
    const double p = 0.3;
    Tensor big(1000, 100, 1.0);  // nonzero everywhere
    Rng rng(17);
    auto [v0, v1] =
        make_positive_pair(big, AugmentSpec{AugmentSpec::Kind::zeroing, p}, rng);
    size_t differ = 0;
    for (size_t i = 0; i < big.size(); ++i)
      differ += v0.data()[i] != v1.data()[i];
    double expect = 2.0 * p * (1.0 - p) * static_cast<double>(big.size());
    CHECK(std::abs(differ - expect) / expect < 0.02);
  }
}

TEST_CASE("spec validation and parsing") {
  CHECK_THROWS_AS(AugmentSpec::parse("zeroing:1.0"), Error);
  CHECK_THROWS_AS(AugmentSpec::parse("gaussian:0"), Error);
  CHECK_THROWS_AS(AugmentSpec::parse("perm:0.5"), Error);
  CHECK_THROWS_AS(AugmentSpec::parse("nocolon"), Error);
  AugmentSpec z = AugmentSpec::parse("zeroing:0.7");
  CHECK(z.kind == AugmentSpec::Kind::zeroing);
  CHECK(z.param == 0.7);
  AugmentSpec g = AugmentSpec::parse("gaussian:2.0");
  CHECK(g.kind == AugmentSpec::Kind::gaussian);
  CHECK(g.param == 2.0);
}

TEST_CASE("standardizer centers and scales") {
  Rng rng(23);
  Tensor x(500, 3);
  for (int i = 0; i < x.rows(); ++i) {
    x.at(i, 0) = 5.0 + 2.0 * rng.normal();
    x.at(i, 1) = -1.0 + 0.5 * rng.normal();
    x.at(i, 2) = 7.0;  // constant
  }
  Standardizer s = Standardizer::fit(x);
  Tensor y = s.apply(x);
  for (int j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (int i = 0; i < y.rows(); ++i) mean += y.at(i, j);
    mean /= y.rows();
    double var = 0.0;
    for (int i = 0; i < y.rows(); ++i)
      var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= y.rows();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (int i = 0; i < y.rows(); ++i) CHECK(y.at(i, 2) == 0.0);
}
