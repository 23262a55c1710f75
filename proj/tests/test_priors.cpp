#include <doctest.h>

#include "bmeta/errors.hpp"
#include "bmeta/priors.hpp"

using namespace bmeta;

TEST_CASE("method of moments returns a beta with the requested moments") {
  for (auto [m, v] : {std::pair{0.373, 0.00022}, {0.401, 0.000741}, {0.2, 0.01}, {0.9, 0.005}}) {
    const auto p = beta_from_moments(m, v);
    CHECK(p.mean() == doctest::Approx(m).epsilon(1e-12));
    CHECK(p.variance() == doctest::Approx(v).epsilon(1e-10));
  }
}

TEST_CASE("mCRC mixed-study priors") {
  auto vc = beta_from_moments(0.373, 0.00022);
  CHECK(vc.alpha == doctest::Approx(396).epsilon(0.5 / 396));
  CHECK(vc.beta == doctest::Approx(666).epsilon(0.5 / 666));
  auto guren = beta_from_moments(0.401, 0.000741);
  CHECK(std::abs(guren.alpha - 129.6) <= 0.5);
  CHECK(std::abs(guren.beta - 193.6) <= 0.5);
  auto boke = beta_from_moments(0.431, 0.000779);
  CHECK(std::abs(boke.alpha - 135.25) <= 0.5);
  CHECK(std::abs(boke.beta - 178.56) <= 0.5);
  auto range = beta_from_range(0.30, 0.54);
  CHECK(range.alpha == doctest::Approx(28.0));
  CHECK(range.beta == doctest::Approx(38.6667).epsilon(1e-4));
}

TEST_CASE("counts route uses the binomial variance of the observed proportion") {
  // 397 of 1063 with known status: mean 0.3735, var = m(1-m)/n
  const auto p = beta_from_counts(397, 1063);
  const double m = 397.0 / 1063.0;
  CHECK(p.mean() == doctest::Approx(m));
  CHECK(p.variance() == doctest::Approx(m * (1 - m) / 1063).epsilon(1e-10));
  // the published mean is rounded to 0.373 before matching moments
  CHECK(std::abs(p.alpha - 396.0) < 1.0);
}

TEST_CASE("invalid prior inputs") {
  CHECK_THROWS_WITH_AS(beta_from_moments(0.5, 0.3), doctest::Contains("variance too large"),
                       ValidationError);
  CHECK_THROWS_AS(beta_from_moments(0.0, 0.01), ValidationError);
  CHECK_THROWS_AS(beta_from_moments(1.0, 0.01), ValidationError);
  CHECK_THROWS_AS(beta_from_moments(0.5, 0.0), ValidationError);
  CHECK_THROWS_WITH_AS(beta_from_counts(0, 10), doctest::Contains("degenerate"), ValidationError);
  CHECK_THROWS_AS(beta_from_counts(10, 10), ValidationError);
  CHECK_THROWS_AS(beta_from_counts(3, 0), ValidationError);
  CHECK_THROWS_AS(beta_from_range(0.6, 0.4), ValidationError);
  CHECK_THROWS_AS(beta_from_range(-0.1, 0.4), ValidationError);
}

TEST_CASE("hyperprior defaults and validation") {
  HyperPriors h;
  CHECK(h.d_pos_sd == 100.0);
  CHECK(h.tau_pos_halfnormal_sd == 10.0);
  CHECK_NOTHROW(h.validate());
  h.tau_beta_halfnormal_sd = 0.0;
  CHECK_THROWS_AS(h.validate(), ValidationError);
}
