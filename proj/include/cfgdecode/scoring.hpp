#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/decoding.hpp"
#include "json.hpp"

namespace cfgdecode {

// ---------------------------------------------------------------------------
// Multiple-choice log-likelihood scoring

struct MCTask {
  std::string id;
  std::string prompt;
  std::vector<std::string> choices;
  std::size_t answer_index = 0;
};

// Throws InvalidArgs unless there are >= 2 non-empty choices and the answer
// index is in range. The prompt must be non-empty.
void validate(const MCTask& task);

struct ChoiceScore {
  double loglik = 0.0;       // summed guided log-prob of the choice bytes
  double loglik_norm = 0.0;  // loglik / byte length
};

struct TaskResult {
  std::string id;
  std::size_t answer_index = 0;
  std::size_t prediction = 0;       // argmax of raw loglik
  std::size_t prediction_norm = 0;  // argmax of byte-normalized loglik
  bool correct = false;
  bool correct_norm = false;
  std::vector<ChoiceScore> choices;
};

struct ScoreReport {
  std::string model_name;
  std::string model_type;
  double gamma = 1.0;
  ContextMode mode = ContextMode::LastToken;
  std::vector<TaskResult> tasks;
  double acc = 0.0;
  double acc_norm = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Teacher-forced sum of guided log-probs of `continuation` after `prompt`,
// with the dual context set up exactly as for generation. Throws InvalidArgs
// on an empty continuation.
double cfg_continuation_logprob(const LanguageModel& model,
                                std::span<const TokenId> prompt,
                                std::span<const TokenId> continuation,
                                const GuidanceConfig& config);

// Ties go to the lowest choice index.
TaskResult score_mc_task(const LanguageModel& model, const MCTask& task,
                         const GuidanceConfig& config);

struct EvalOptions {
  // Tasks are independent; results are always reported in input order.
  unsigned threads = 1;
};

// Throws EmptyTaskSet on an empty list.
ScoreReport evaluate_taskset(const LanguageModel& model,
                             const std::vector<MCTask>& tasks,
                             const GuidanceConfig& config,
                             EvalOptions options = {});

// One JSON object per line: {"id", "prompt", "choices", "answer"}.
// Blank lines are skipped. Throws MalformedFileError with the 1-based line.
std::vector<MCTask> parse_tasks(std::istream& in);
std::vector<MCTask> load_tasks(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// pass@k

struct PassAtKInput {
  std::string task_id;
  std::int64_t n = 0;  // samples generated
  std::int64_t c = 0;  // samples passing
};

// Unbiased estimator 1 - C(n-c, k) / C(n, k) in product form. Throws
// InvalidArgs unless 0 <= c <= n and 1 <= k <= n.
double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k);

// Mean of per-task pass@k with a shared k. Throws InvalidArgs when empty.
double aggregate_pass_at_k(const std::vector<PassAtKInput>& inputs,
                           std::int64_t k);

// One {"task_id", "n", "c"} object per line.
std::vector<PassAtKInput> parse_pass_at_k_inputs(std::istream& in);
std::vector<PassAtKInput> load_pass_at_k_inputs(const std::filesystem::path& path);

}  // namespace cfgdecode
