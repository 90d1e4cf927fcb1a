#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cfgdecode/decoding.hpp"

namespace cfgdecode {

inline constexpr const char* kTraceCsvHeader =
    "step,token,guided_logprob,H_cond,H_uncond,H_guided,ovl_cond,ovl_uncond";

enum class EntropyUnit { Nats, Bits };

// Per-token pooled statistics over a generation trace.
struct TraceSummary {
  std::vector<StepRecord> rows;
  std::size_t step_count = 0;

  double mean_guided_logprob = 0.0;
  double mean_entropy_cond = 0.0;
  double mean_entropy_uncond = 0.0;
  double mean_entropy_guided = 0.0;
  double median_entropy_cond = 0.0;
  double median_entropy_uncond = 0.0;
  double median_entropy_guided = 0.0;
  double mean_overlap_cond = 0.0;
  double mean_overlap_uncond = 0.0;
};

// Throws EmptyTrace.
TraceSummary trace_summary(const std::vector<StepRecord>& steps);
inline TraceSummary trace_summary(const GenerationTrace& trace) {
  return trace_summary(trace.steps);
}

// Header, one row per step, then a row whose first field is "mean".
void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& steps,
                     EntropyUnit unit = EntropyUnit::Nats);

// Summary CSV: the trace rows followed by "mean" and "median" rows.
void write_summary_csv(std::ostream& out, const TraceSummary& summary,
                       EntropyUnit unit = EntropyUnit::Nats);

// Reads the per-step rows of a trace CSV; aggregate rows are skipped.
// Throws Format on a bad header or row, EmptyTrace when no rows remain.
std::vector<StepRecord> read_trace_csv(std::istream& in);
std::vector<StepRecord> load_trace_csv(const std::filesystem::path& path);

}  // namespace cfgdecode
