#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/diagnostics.hpp"
#include "cfgdecode/error.hpp"
#include "cfgdecode/logprob.hpp"
#include "cfgdecode/sampler.hpp"
#include "cfgdecode/vocab.hpp"

namespace cfgdecode {

// How the unconditional context is derived from the prompt.
enum class ContextMode {
  LastToken,       // uncond = [last prompt token]
  NegativePrompt,  // uncond = negative_prompt ++ [last prompt token]
  CustomSplit,     // uncond = prompt[split_index..]
};

std::string_view to_string(ContextMode mode);
ContextMode parse_context_mode(std::string_view name);

struct GuidanceConfig {
  double gamma = 1.0;
  ContextMode mode = ContextMode::LastToken;
  std::optional<TokenSeq> negative_prompt;  // required for NegativePrompt
  std::size_t split_index = 0;              // used by CustomSplit
  SamplerConfig sampler;
  double diagnostic_top_p = kDiagnosticTopP;
};

// Throws InvalidArgs / MissingNegativePrompt.
void validate(const GuidanceConfig& config);

// Conditional and unconditional contexts advanced in lockstep: every sampled
// (or teacher-forced) token is appended to both.
struct DualContext {
  TokenSeq cond;
  TokenSeq uncond;
  std::size_t generated_count = 0;

  void append(TokenId token) {
    cond.push_back(token);
    uncond.push_back(token);
    ++generated_count;
  }
};

// Throws EmptyPrompt, MissingNegativePrompt, InvalidArgs (split index).
DualContext init_dual_context(std::span<const TokenId> prompt,
                              const GuidanceConfig& config);

struct GuidedDistributions {
  LogProbVector cond;
  LogProbVector uncond;
  LogProbVector guided;
};

// One backend call per context, then guide().
GuidedDistributions guided_distributions(const LanguageModel& model,
                                         const DualContext& ctx, double gamma);

struct StepRecord {
  TokenId token = 0;
  double guided_logprob = 0.0;
  double entropy_cond = 0.0;
  double entropy_uncond = 0.0;
  double entropy_guided = 0.0;
  std::size_t overlap_cond = 0;    // |top-p(guided) & top-p(cond)|
  std::size_t overlap_uncond = 0;  // |top-p(guided) & top-p(uncond)|

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

StepRecord make_step_record(TokenId token, const GuidedDistributions& dists,
                            double top_p);

struct StepResult {
  TokenId token;
  StepRecord record;
  DualContext context;
};

// Guides, samples, and appends the sampled token to both contexts.
StepResult step(const LanguageModel& model, DualContext ctx,
                const GuidanceConfig& config, Rng& rng);

enum class StopReason { Eos, MaxTokens, StopSequence, Error };
std::string_view to_string(StopReason reason);

struct GenerationTrace {
  TokenSeq prompt;
  GuidanceConfig config;
  std::vector<StepRecord> steps;
  StopReason stop_reason = StopReason::MaxTokens;

  TokenSeq tokens() const;
};

// Raised by generate(); carries the steps completed before the failure.
class GenerationError : public Error {
 public:
  GenerationError(const Error& cause, GenerationTrace partial)
      : Error(cause.kind(), std::string("generation failed after ") +
                                std::to_string(partial.steps.size()) +
                                " steps: " + cause.what()),
        partial_(std::move(partial)) {}

  const GenerationTrace& partial_trace() const noexcept { return partial_; }

 private:
  GenerationTrace partial_;
};

// Incremental guided decoding session; generate() drains one, the service
// streams from one.
class GuidedDecoder {
 public:
  GuidedDecoder(const LanguageModel& model, TokenSeq prompt,
                GuidanceConfig config, std::size_t max_tokens,
                std::vector<TokenSeq> stop_sequences = {});

  // Next step, or nullopt once a stop condition has been met. Backend errors
  // propagate and leave the session finished with StopReason::Error.
  std::optional<StepRecord> next();

  bool finished() const noexcept { return done_; }
  const GenerationTrace& trace() const noexcept { return trace_; }
  GenerationTrace take_trace() { return std::move(trace_); }
  const DualContext& context() const noexcept { return ctx_; }

 private:
  bool hit_stop_sequence() const;

  const LanguageModel& model_;
  std::size_t max_tokens_;
  std::vector<TokenSeq> stops_;
  DualContext ctx_;
  Rng rng_;
  GenerationTrace trace_;
  bool done_ = false;
};

// Decodes until EOS, a stop sequence (matched against generated tokens), or
// max_tokens. Throws InvalidArgs for max_tokens == 0 and GenerationError for
// failures mid-decode.
GenerationTrace generate(const LanguageModel& model, std::span<const TokenId> prompt,
                         const GuidanceConfig& config, std::size_t max_tokens,
                         const std::vector<TokenSeq>& stop_sequences = {});

}  // namespace cfgdecode
