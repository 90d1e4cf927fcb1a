#include <cmath>
#include <limits>
#include <random>

#include "../support/oracles.hpp"
#include "cfgdecode/error.hpp"
#include "cfgdecode/logprob.hpp"
#include "doctest.h"

using namespace cfgdecode;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_abs_diff(const LogProbVector& a, const LogProbVector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;  // also covers matching -inf
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

std::vector<double> random_logits(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("normalize: uniform input gives -ln V everywhere") {
  const auto lp = normalize(std::vector<double>(258, 0.0));
  for (double v : lp) CHECK(v == doctest::Approx(-std::log(258.0)).epsilon(1e-15));
}

TEST_CASE("normalize: shift invariance and unit mass") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> shift(-500.0, 500.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_logits(258, rng);
    const auto base = normalize(x);
    const double a = shift(rng);
    for (double& v : x) v += a;
    CHECK(max_abs_diff(normalize(x), base) <= 1e-9);

    double mass = 0.0;
    for (double v : base) mass += std::exp(v);
    CHECK(std::abs(mass - 1.0) <= 1e-9);
  }
}

TEST_CASE("normalize: -infinity entries stay impossible, all -inf is an error") {
  const auto lp = normalize(std::vector<double>{0.0, kNegInf, 0.0});
  CHECK(lp[1] == kNegInf);
  CHECK(lp[0] == doctest::Approx(std::log(0.5)));

  try {
    normalize(std::vector<double>{kNegInf, kNegInf});
    FAIL("expected AllNegInfinity");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AllNegInfinity);
  }
  CHECK_THROWS_AS(normalize(std::vector<double>{0.0, std::nan("")}), Error);
  CHECK_THROWS_AS(
      normalize(std::vector<double>{0.0, std::numeric_limits<double>::infinity()}),
      Error);
}

TEST_CASE("LogProbVector factories validate normalization") {
  CHECK_NOTHROW(LogProbVector::from_probs(std::vector<double>{0.25, 0.75}));
  CHECK_THROWS_AS(LogProbVector::from_probs(std::vector<double>{0.5, 0.6}), Error);
  CHECK_THROWS_AS(LogProbVector::from_probs(std::vector<double>{-0.1, 1.1}), Error);
  const auto lp = LogProbVector::from_probs(std::vector<double>{0.0, 1.0});
  CHECK(lp[0] == kNegInf);
  CHECK(lp[1] == 0.0);
}

TEST_CASE("guide: worked V=3 example at gamma=2") {
  // c^2 / u = [2/25, 5/6, 9/20] -> normalized [24, 250, 135] / 409.
  const auto u = LogProbVector::from_probs(std::vector<double>{0.5, 0.3, 0.2});
  const auto c = LogProbVector::from_probs(std::vector<double>{0.2, 0.5, 0.3});
  const auto g = guide(c, u, 2.0).probs();
  CHECK(g[0] == doctest::Approx(24.0 / 409.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(250.0 / 409.0).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(135.0 / 409.0).epsilon(1e-12));
}

TEST_CASE("guide: identity cases gamma=1 and gamma=0") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = normalize(random_logits(64, rng));
    const auto u = normalize(random_logits(64, rng));
    CHECK(max_abs_diff(guide(c, u, 1.0), c) <= 1e-12);
    CHECK(max_abs_diff(guide(c, u, 0.0), u) <= 1e-12);
  }
}

TEST_CASE("guide: equal contexts return cond for every gamma") {
  std::mt19937_64 rng(3);
  const auto c = normalize(random_logits(258, rng));
  for (double gamma : {0.0, 0.5, 1.0, 1.5, 3.0, 10.0}) {
    CHECK(max_abs_diff(guide(c, c, gamma), c) <= 1e-12);
  }
}

TEST_CASE("guide: matches probability-space oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> gamma_dist(0.0, 4.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t vocab = trial % 2 == 0 ? 3 : 258;
    const auto c = oracle::random_distribution(vocab, rng);
    const auto u = oracle::random_distribution(vocab, rng);
    const double gamma = gamma_dist(rng);
    const auto expected = oracle::guided_probs(c, u, gamma);
    const auto got = guide(LogProbVector::from_probs(c), LogProbVector::from_probs(u), gamma);
    for (std::size_t i = 0; i < vocab; ++i) {
      REQUIRE(std::abs(std::exp(got[i]) - expected[i]) <= 1e-9);
    }
  }
}

TEST_CASE("guide: output is normalized and composes log-linearly") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> gamma_dist(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = normalize(random_logits(32, rng));
    const auto u = normalize(random_logits(32, rng));
    const double g1 = gamma_dist(rng);
    const double g2 = gamma_dist(rng);
    const auto once = guide(c, u, g1);
    CHECK(std::abs(log_sum_exp(once.values())) <= 1e-9);
    const auto twice = guide(once, u, g2);
    CHECK(max_abs_diff(twice, guide(c, u, g1 * g2)) <= 1e-9);
  }
}

TEST_CASE("guide: -infinity handling") {
  // Token 0 impossible under cond, token 1 impossible only under uncond.
  const auto c = normalize(std::vector<double>{kNegInf, 0.0, 0.0});
  const auto u = normalize(std::vector<double>{0.0, kNegInf, 0.0});

  const auto g = guide(c, u, 2.0);
  CHECK(g[0] == kNegInf);
  CHECK(std::isfinite(g[1]));
  CHECK(std::isfinite(g[2]));
  // Floor of -80 for the uncond-impossible token: weight exp(-80 + 2 * (c + 80)).
  const double w1 = std::exp(-80.0 + 2.0 * (c[1] + 80.0));
  const double w2 = std::exp(u[2] + 2.0 * (c[2] - u[2]));
  CHECK(std::exp(g[1]) == doctest::Approx(w1 / (w1 + w2)));

  // Impossible under both stays impossible; gamma = 0 reproduces uncond.
  const auto both = normalize(std::vector<double>{kNegInf, 0.0});
  CHECK(guide(both, both, 3.0)[0] == kNegInf);
  CHECK(max_abs_diff(guide(c, u, 0.0), u) == 0.0);
}

TEST_CASE("guide: argument validation") {
  const auto a = normalize(std::vector<double>{0.0, 0.0});
  const auto b = normalize(std::vector<double>{0.0, 0.0, 0.0});
  CHECK_THROWS_AS(guide(a, b, 1.0), Error);
  CHECK_THROWS_AS(guide(a, a, -0.5), Error);
  CHECK_THROWS_AS(guide(a, a, std::nan("")), Error);
}
