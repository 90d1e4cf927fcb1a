#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "cfgdecode/logprob.hpp"
#include "cfgdecode/vocab.hpp"

namespace cfgdecode {

// xoshiro256** seeded through splitmix64. Fixed algorithm so sampled traces
// are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::array<std::uint64_t, 4> state_{};
};

struct Greedy {};
struct Temperature {
  double temperature = 1.0;
};
struct TopK {
  std::size_t k = 40;
  double temperature = 1.0;
};
struct TopP {
  double p = 0.9;
  double temperature = 1.0;
};

using SamplingStrategy = std::variant<Greedy, Temperature, TopK, TopP>;

struct SamplerConfig {
  SamplingStrategy strategy = Greedy{};
  std::uint64_t seed = 0;
};

// Picks a strategy from optional knobs the way the CLI and service expose
// them: top_k wins over top_p, either uses temperature (default 1); a bare
// temperature > 0 samples from the full distribution; nothing set is greedy.
SamplerConfig make_sampler_config(std::optional<double> temperature,
                                  std::optional<std::size_t> top_k,
                                  std::optional<double> top_p,
                                  std::uint64_t seed);

// Throws InvalidArgs when a parameter is out of range.
void validate(const SamplerConfig& config);

std::string describe(const SamplingStrategy& strategy);

// Draws a token from an already-guided distribution. Greedy takes the
// lowest-id argmax. The other strategies truncate (top-k / top-p on the
// guided probabilities), rescale the survivors by 1/temperature, and draw
// by inverse CDF over the survivors in ascending id order.
TokenId sample(const LogProbVector& dist, const SamplingStrategy& strategy,
               Rng& rng);

}  // namespace cfgdecode
