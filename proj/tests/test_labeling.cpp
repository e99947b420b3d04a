#include <catch_amalgamated.hpp>

#include <limits>
#include <random>

#include "rgmm/error.hpp"
#include "rgmm/labeling.hpp"

using namespace rgmm;

TEST_CASE("tissue labels at the default threshold") {
  CHECK(label_tissue(100.0) == kNonBone);
  CHECK(label_tissue(-1000.0) == kNonBone);
  CHECK(label_tissue(350.0) == kBone);
  CHECK(label_tissue(std::nextafter(100.0, 200.0)) == kBone);
}

TEST_CASE("threshold is a parameter") {
  CHECK(label_tissue(150.0, 200.0) == kNonBone);
  CHECK(label_tissue(200.0, 200.0) == kNonBone);
  CHECK(label_tissue(201.0, 200.0) == kBone);
}

TEST_CASE("labeling is monotone") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1200.0, 2000.0);
  for (int i = 0; i < 10000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    CHECK(label_tissue(a) <= label_tissue(b));
  }
}

TEST_CASE("non-finite intensities are rejected") {
  CHECK_THROWS_AS(label_tissue(std::numeric_limits<double>::quiet_NaN()), Error);
  CHECK_THROWS_AS(label_tissue(std::numeric_limits<double>::infinity()), Error);
}
