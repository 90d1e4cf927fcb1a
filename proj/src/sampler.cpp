#include "cfgdecode/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "cfgdecode/diagnostics.hpp"
#include "cfgdecode/error.hpp"

namespace cfgdecode {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw Error(ErrorKind::InvalidArgs,
                "temperature must be > 0, got " + std::to_string(t));
  }
}

TokenId argmax_lowest_id(const LogProbVector& dist) {
  TokenId best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = static_cast<TokenId>(i);
  }
  return best;
}

std::vector<TokenId> top_k_ids(const LogProbVector& dist, std::size_t k) {
  std::vector<TokenId> ids(dist.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](TokenId a, TokenId b) { return dist[a] > dist[b]; });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

TokenId draw(const LogProbVector& dist, std::vector<TokenId> support,
             double temperature, Rng& rng) {
  std::sort(support.begin(), support.end());
  double max = -std::numeric_limits<double>::infinity();
  for (TokenId id : support) max = std::max(max, dist[id]);

  std::vector<double> weights(support.size());
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double lp = dist[support[i]];
    weights[i] = std::isinf(lp) ? 0.0 : std::exp((lp - max) / temperature);
    total += weights[i];
  }

  const double target = rng.uniform() * total;
  double cumulative = 0.0;
  TokenId last_possible = support.front();
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (weights[i] == 0.0) continue;
    cumulative += weights[i];
    last_possible = support[i];
    if (target < cumulative) return support[i];
  }
  return last_possible;
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& word : state_) word = splitmix64(seed);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

SamplerConfig make_sampler_config(std::optional<double> temperature,
                                  std::optional<std::size_t> top_k,
                                  std::optional<double> top_p,
                                  std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.seed = seed;
  const double t = temperature.value_or(1.0);
  if (top_k) {
    cfg.strategy = TopK{*top_k, t};
  } else if (top_p) {
    cfg.strategy = TopP{*top_p, t};
  } else if (temperature && *temperature > 0.0) {
    cfg.strategy = Temperature{*temperature};
  } else {
    cfg.strategy = Greedy{};
  }
  return cfg;
}

void validate(const SamplerConfig& config) {
  std::visit(Overloaded{
                 [](const Greedy&) {},
                 [](const Temperature& s) { check_temperature(s.temperature); },
                 [](const TopK& s) {
                   if (s.k < 1) {
                     throw Error(ErrorKind::InvalidArgs, "top-k requires k >= 1");
                   }
                   check_temperature(s.temperature);
                 },
                 [](const TopP& s) {
                   if (!(s.p > 0.0 && s.p <= 1.0)) {
                     throw Error(ErrorKind::InvalidArgs,
                                 "top-p requires p in (0, 1]");
                   }
                   check_temperature(s.temperature);
                 },
             },
             config.strategy);
}

std::string describe(const SamplingStrategy& strategy) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const Greedy&) { os << "greedy"; },
                 [&](const Temperature& s) {
                   os << "temperature(t=" << s.temperature << ")";
                 },
                 [&](const TopK& s) {
                   os << "top_k(k=" << s.k << ",t=" << s.temperature << ")";
                 },
                 [&](const TopP& s) {
                   os << "top_p(p=" << s.p << ",t=" << s.temperature << ")";
                 },
             },
             strategy);
  return os.str();
}

TokenId sample(const LogProbVector& dist, const SamplingStrategy& strategy,
               Rng& rng) {
  if (dist.size() == 0) {
    throw Error(ErrorKind::InvalidArgs, "cannot sample from an empty distribution");
  }
  return std::visit(
      Overloaded{
          [&](const Greedy&) { return argmax_lowest_id(dist); },
          [&](const Temperature& s) {
            check_temperature(s.temperature);
            std::vector<TokenId> all(dist.size());
            std::iota(all.begin(), all.end(), 0);
            return draw(dist, std::move(all), s.temperature, rng);
          },
          [&](const TopK& s) {
            check_temperature(s.temperature);
            return draw(dist, top_k_ids(dist, std::max<std::size_t>(s.k, 1)),
                        s.temperature, rng);
          },
          [&](const TopP& s) {
            check_temperature(s.temperature);
            return draw(dist, top_p_set(dist, s.p), s.temperature, rng);
          },
      },
      strategy);
}

}  // namespace cfgdecode
