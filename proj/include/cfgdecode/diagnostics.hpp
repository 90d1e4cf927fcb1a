#pragma once

#include <cstddef>
#include <vector>

#include "cfgdecode/logprob.hpp"
#include "cfgdecode/vocab.hpp"

namespace cfgdecode {

// Top-p mass used for the overlap diagnostics unless configured otherwise.
inline constexpr double kDiagnosticTopP = 0.9;

// Cumulative sums within this slack of p count as reaching p, so that e.g.
// two quarter-mass tokens satisfy p = 0.5 despite rounding in exp(log 0.25).
inline constexpr double kTopPSlack = 1e-12;

// Shannon entropy in nats, 0 log 0 = 0, clamped to [0, ln V].
// Throws NotNormalized if the probabilities sum to 1 +- more than 1e-6.
double entropy(const LogProbVector& dist);

// Tokens sorted by probability (desc, ties by ascending id), cut at the
// shortest prefix whose cumulative mass reaches p. Zero-probability tokens
// are never included. Throws InvalidArgs unless p is in (0, 1].
std::vector<TokenId> top_p_set(const LogProbVector& dist, double p);

// |top_p_set(a, p) intersect top_p_set(b, p)|
std::size_t top_p_overlap(const LogProbVector& a, const LogProbVector& b,
                          double p);

}  // namespace cfgdecode
