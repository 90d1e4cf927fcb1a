#include "cfgdecode/logprob.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cfgdecode/error.hpp"

namespace cfgdecode {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kAlreadyNormalized = 1e-12;

void check_logits(std::span<const double> logits) {
  if (logits.empty()) {
    throw Error(ErrorKind::InvalidArgs, "empty logit vector");
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = logits[i];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorKind::InvalidArgs,
                  "logit " + std::to_string(i) + " is NaN or +infinity");
    }
  }
}

// Shifts values in place so they log-sum-exp to zero. A vector already
// normalized to within summation rounding is left bit-for-bit unchanged.
void normalize_in_place(std::vector<double>& values) {
  const double lse = log_sum_exp(values);
  if (lse == kNegInf) {
    throw Error(ErrorKind::AllNegInfinity, "every token has zero probability");
  }
  if (std::abs(lse) <= kAlreadyNormalized) return;
  for (double& v : values) v -= lse;
}

}  // namespace

double log_sum_exp(std::span<const double> values) {
  double max = kNegInf;
  for (double v : values) max = std::max(max, v);
  if (max == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max);
  return max + std::log(sum);
}

LogProbVector LogProbVector::from_log_probs(std::vector<double> log_probs) {
  check_logits(log_probs);
  const double lse = log_sum_exp(log_probs);
  if (!(std::abs(lse) <= kNormalizationTolerance)) {
    throw Error(ErrorKind::NotNormalized,
                "log-sum-exp is " + std::to_string(lse));
  }
  return LogProbVector(std::move(log_probs));
}

LogProbVector LogProbVector::from_probs(std::span<const double> probs) {
  std::vector<double> logs(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0) || std::isinf(probs[i])) {
      throw Error(ErrorKind::InvalidArgs,
                  "probability " + std::to_string(i) + " is negative or not finite");
    }
    logs[i] = probs[i] == 0.0 ? kNegInf : std::log(probs[i]);
  }
  return from_log_probs(std::move(logs));
}

std::vector<double> LogProbVector::probs() const {
  std::vector<double> out(values_.size());
  std::transform(values_.begin(), values_.end(), out.begin(),
                 [](double v) { return std::exp(v); });
  return out;
}

LogProbVector normalize(std::span<const double> logits) {
  check_logits(logits);
  std::vector<double> values(logits.begin(), logits.end());
  const double max = *std::max_element(values.begin(), values.end());
  if (max == kNegInf) {
    throw Error(ErrorKind::AllNegInfinity, "every logit is -infinity");
  }
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max);
  const double shift = max + std::log(sum);
  for (double& v : values) v -= shift;
  return LogProbVector(std::move(values));
}

LogProbVector guide(const LogProbVector& cond, const LogProbVector& uncond,
                    double gamma) {
  if (cond.size() != uncond.size()) {
    throw Error(ErrorKind::InvalidArgs, "cond/uncond vocabulary size mismatch");
  }
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw Error(ErrorKind::InvalidArgs,
                "gamma must be finite and >= 0, got " + std::to_string(gamma));
  }
  // Anchoring on whichever endpoint gamma is closer to keeps gamma = 0 and
  // gamma = 1 exact to the last bit.
  const bool anchor_cond = gamma >= 0.5;
  std::vector<double> combined(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    const double c = cond[i];
    double u = uncond[i];
    if (gamma == 0.0) {
      combined[i] = u;
      continue;
    }
    if (c == kNegInf) {
      combined[i] = kNegInf;
      continue;
    }
    if (u == kNegInf) u = kUncondLogProbFloor;
    const double diff = c - u;
    combined[i] = anchor_cond ? c + (gamma - 1.0) * diff : u + gamma * diff;
  }
  normalize_in_place(combined);
  return LogProbVector(std::move(combined));
}

}  // namespace cfgdecode
