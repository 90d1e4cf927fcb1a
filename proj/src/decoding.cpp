#include "cfgdecode/decoding.hpp"

#include <algorithm>
#include <cmath>

namespace cfgdecode {

std::string_view to_string(ContextMode mode) {
  switch (mode) {
    case ContextMode::LastToken: return "last-token";
    case ContextMode::NegativePrompt: return "negative-prompt";
    case ContextMode::CustomSplit: return "custom-split";
  }
  return "unknown";
}

ContextMode parse_context_mode(std::string_view name) {
  if (name == "last-token") return ContextMode::LastToken;
  if (name == "negative-prompt") return ContextMode::NegativePrompt;
  if (name == "custom-split") return ContextMode::CustomSplit;
  throw Error(ErrorKind::InvalidArgs, "unknown context mode '" +
                                          std::string(name) + "'");
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Eos: return "eos";
    case StopReason::MaxTokens: return "max_tokens";
    case StopReason::StopSequence: return "stop_sequence";
    case StopReason::Error: return "error";
  }
  return "unknown";
}

void validate(const GuidanceConfig& config) {
  if (!std::isfinite(config.gamma) || config.gamma < 0.0) {
    throw Error(ErrorKind::InvalidArgs,
                "gamma must be finite and >= 0, got " + std::to_string(config.gamma));
  }
  if (config.mode == ContextMode::NegativePrompt && !config.negative_prompt) {
    throw Error(ErrorKind::MissingNegativePrompt,
                "negative-prompt mode needs a negative prompt");
  }
  if (!(config.diagnostic_top_p > 0.0 && config.diagnostic_top_p <= 1.0)) {
    throw Error(ErrorKind::InvalidArgs, "diagnostic top-p must be in (0, 1]");
  }
  validate(config.sampler);
}

DualContext init_dual_context(std::span<const TokenId> prompt,
                              const GuidanceConfig& config) {
  if (prompt.empty()) throw Error(ErrorKind::EmptyPrompt, "prompt is empty");
  validate(config);

  DualContext ctx;
  ctx.cond.assign(prompt.begin(), prompt.end());
  switch (config.mode) {
    case ContextMode::LastToken:
      ctx.uncond = {prompt.back()};
      break;
    case ContextMode::NegativePrompt:
      ctx.uncond = *config.negative_prompt;
      ctx.uncond.push_back(prompt.back());
      break;
    case ContextMode::CustomSplit:
      if (config.split_index > prompt.size()) {
        throw Error(ErrorKind::InvalidArgs,
                    "split index " + std::to_string(config.split_index) +
                        " beyond prompt of length " + std::to_string(prompt.size()));
      }
      ctx.uncond.assign(prompt.begin() + static_cast<std::ptrdiff_t>(config.split_index),
                        prompt.end());
      break;
  }
  return ctx;
}

GuidedDistributions guided_distributions(const LanguageModel& model,
                                         const DualContext& ctx, double gamma) {
  auto cond = next_logprobs(model, ctx.cond);
  auto uncond = next_logprobs(model, ctx.uncond);
  auto guided = guide(cond, uncond, gamma);
  return {std::move(cond), std::move(uncond), std::move(guided)};
}

StepRecord make_step_record(TokenId token, const GuidedDistributions& dists,
                            double top_p) {
  StepRecord rec;
  rec.token = token;
  rec.guided_logprob = dists.guided[static_cast<std::size_t>(token)];
  rec.entropy_cond = entropy(dists.cond);
  rec.entropy_uncond = entropy(dists.uncond);
  rec.entropy_guided = entropy(dists.guided);
  rec.overlap_cond = top_p_overlap(dists.guided, dists.cond, top_p);
  rec.overlap_uncond = top_p_overlap(dists.guided, dists.uncond, top_p);
  return rec;
}

StepResult step(const LanguageModel& model, DualContext ctx,
                const GuidanceConfig& config, Rng& rng) {
  const auto dists = guided_distributions(model, ctx, config.gamma);
  const TokenId token = sample(dists.guided, config.sampler.strategy, rng);
  auto record = make_step_record(token, dists, config.diagnostic_top_p);
  ctx.append(token);
  return {token, record, std::move(ctx)};
}

TokenSeq GenerationTrace::tokens() const {
  TokenSeq out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

GuidedDecoder::GuidedDecoder(const LanguageModel& model, TokenSeq prompt,
                             GuidanceConfig config, std::size_t max_tokens,
                             std::vector<TokenSeq> stop_sequences)
    : model_(model),
      max_tokens_(max_tokens),
      stops_(std::move(stop_sequences)),
      rng_(config.sampler.seed) {
  if (max_tokens_ == 0) {
    throw Error(ErrorKind::InvalidArgs, "max_tokens must be >= 1");
  }
  validate_tokens(prompt, model.vocab_size());
  ctx_ = init_dual_context(prompt, config);
  std::erase_if(stops_, [](const TokenSeq& s) { return s.empty(); });
  trace_.prompt = std::move(prompt);
  trace_.config = std::move(config);
}

bool GuidedDecoder::hit_stop_sequence() const {
  const auto& generated = trace_.steps;
  for (const auto& stop : stops_) {
    if (stop.size() > generated.size()) continue;
    const auto offset = generated.size() - stop.size();
    bool match = true;
    for (std::size_t i = 0; i < stop.size() && match; ++i) {
      match = generated[offset + i].token == stop[i];
    }
    if (match) return true;
  }
  return false;
}

std::optional<StepRecord> GuidedDecoder::next() {
  if (done_) return std::nullopt;
  try {
    auto result = step(model_, std::move(ctx_), trace_.config, rng_);
    ctx_ = std::move(result.context);
    trace_.steps.push_back(result.record);
  } catch (...) {
    done_ = true;
    trace_.stop_reason = StopReason::Error;
    throw;
  }

  const TokenId token = trace_.steps.back().token;
  if (token == kEos && model_.vocab_size() > static_cast<std::size_t>(kEos)) {
    done_ = true;
    trace_.stop_reason = StopReason::Eos;
  } else if (hit_stop_sequence()) {
    done_ = true;
    trace_.stop_reason = StopReason::StopSequence;
  } else if (trace_.steps.size() >= max_tokens_) {
    done_ = true;
    trace_.stop_reason = StopReason::MaxTokens;
  }
  return trace_.steps.back();
}

GenerationTrace generate(const LanguageModel& model, std::span<const TokenId> prompt,
                         const GuidanceConfig& config, std::size_t max_tokens,
                         const std::vector<TokenSeq>& stop_sequences) {
  GuidedDecoder decoder(model, TokenSeq(prompt.begin(), prompt.end()), config,
                        max_tokens, stop_sequences);
  try {
    while (decoder.next()) {
    }
  } catch (const Error& e) {
    throw GenerationError(e, decoder.take_trace());
  }
  return decoder.take_trace();
}

}  // namespace cfgdecode
