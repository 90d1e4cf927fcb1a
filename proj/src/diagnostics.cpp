#include "cfgdecode/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cfgdecode/error.hpp"

namespace cfgdecode {

double entropy(const LogProbVector& dist) {
  double mass = 0.0;
  double h = 0.0;
  for (double lp : dist) {
    const double p = std::exp(lp);
    mass += p;
    if (p > 0.0) h -= p * lp;
  }
  if (std::abs(mass - 1.0) > 1e-6) {
    throw Error(ErrorKind::NotNormalized,
                "probabilities sum to " + std::to_string(mass));
  }
  const double max_h = std::log(static_cast<double>(dist.size()));
  return std::clamp(h, 0.0, max_h);
}

std::vector<TokenId> top_p_set(const LogProbVector& dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::InvalidArgs,
                "top-p mass must be in (0, 1], got " + std::to_string(p));
  }
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return dist[a] > dist[b];
  });

  std::vector<TokenId> out;
  double cumulative = 0.0;
  for (TokenId id : order) {
    const double prob = std::exp(dist[id]);
    if (prob == 0.0) break;
    out.push_back(id);
    cumulative += prob;
    if (cumulative >= p - kTopPSlack) break;
  }
  return out;
}

std::size_t top_p_overlap(const LogProbVector& a, const LogProbVector& b,
                          double p) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::InvalidArgs, "vocabulary size mismatch");
  }
  auto set_a = top_p_set(a, p);
  auto set_b = top_p_set(b, p);
  std::sort(set_a.begin(), set_a.end());
  std::sort(set_b.begin(), set_b.end());
  std::vector<TokenId> both;
  std::set_intersection(set_a.begin(), set_a.end(), set_b.begin(), set_b.end(),
                        std::back_inserter(both));
  return both.size();
}

}  // namespace cfgdecode
