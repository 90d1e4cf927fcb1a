#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cfgdecode {

// Unnormalized next-token scores. -infinity marks an impossible token; NaN
// and +infinity are rejected wherever logits enter the library.
using Logits = std::vector<double>;

inline constexpr double kNormalizationTolerance = 1e-9;

// Log-probability floor substituted for tokens that only the unconditional
// distribution rules out, so guidance never amplifies toward +infinity.
inline constexpr double kUncondLogProbFloor = -80.0;

// A log-distribution over the vocabulary: log-sum-exp of the entries is 0
// within kNormalizationTolerance. Only normalize(), guide() and the checked
// factories produce one.
class LogProbVector {
 public:
  LogProbVector() = default;

  // Validates normalization; throws NotNormalized otherwise.
  static LogProbVector from_log_probs(std::vector<double> log_probs);
  // Takes the log of a probability vector (zeros become -infinity).
  static LogProbVector from_probs(std::span<const double> probs);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  std::vector<double> probs() const;

  friend bool operator==(const LogProbVector&, const LogProbVector&) = default;

 private:
  explicit LogProbVector(std::vector<double> values)
      : values_(std::move(values)) {}

  friend LogProbVector normalize(std::span<const double> logits);
  friend LogProbVector guide(const LogProbVector&, const LogProbVector&,
                             double);

  std::vector<double> values_;
};

// log-sum-exp with max subtraction; -infinity when all entries are.
double log_sum_exp(std::span<const double> values);

// Stabilized log-softmax. Throws AllNegInfinity when no token is possible and
// InvalidArgs on NaN / +infinity / empty input.
LogProbVector normalize(std::span<const double> logits);

// Classifier-free guidance in log space:
//   guided = normalize(uncond + gamma * (cond - uncond))
// i.e. guided probability proportional to u * (c / u)^gamma.
// A token impossible under cond stays impossible for gamma > 0; a token
// impossible only under uncond is floored at kUncondLogProbFloor.
LogProbVector guide(const LogProbVector& cond, const LogProbVector& uncond,
                    double gamma);

}  // namespace cfgdecode
