#include "cfgdecode/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cfgdecode {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double scale(EntropyUnit unit) {
  return unit == EntropyUnit::Bits ? 1.0 / std::numbers::ln2 : 1.0;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <class T>
T parse_number(const std::string& text, std::size_t line) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorKind::Format, "trace line " + std::to_string(line) +
                                       ": bad number '" + text + "'");
  }
  return value;
}

void write_row(std::ostream& out, const std::string& label, const std::string& token,
               double logprob, double hc, double hu, double hg,
               const std::string& oc, const std::string& ou) {
  out << label << ',' << token << ',' << fmt(logprob) << ',' << fmt(hc) << ','
      << fmt(hu) << ',' << fmt(hg) << ',' << oc << ',' << ou << '\n';
}

void write_steps(std::ostream& out, const std::vector<StepRecord>& steps,
                 double s) {
  out << kTraceCsvHeader << '\n';
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& r = steps[i];
    write_row(out, std::to_string(i), std::to_string(r.token), r.guided_logprob,
              r.entropy_cond * s, r.entropy_uncond * s, r.entropy_guided * s,
              std::to_string(r.overlap_cond), std::to_string(r.overlap_uncond));
  }
}

}  // namespace

TraceSummary trace_summary(const std::vector<StepRecord>& steps) {
  if (steps.empty()) throw Error(ErrorKind::EmptyTrace, "trace has no steps");
  TraceSummary s;
  s.rows = steps;
  s.step_count = steps.size();

  std::vector<double> hc, hu, hg;
  for (const auto& r : steps) {
    s.mean_guided_logprob += r.guided_logprob;
    s.mean_entropy_cond += r.entropy_cond;
    s.mean_entropy_uncond += r.entropy_uncond;
    s.mean_entropy_guided += r.entropy_guided;
    s.mean_overlap_cond += static_cast<double>(r.overlap_cond);
    s.mean_overlap_uncond += static_cast<double>(r.overlap_uncond);
    hc.push_back(r.entropy_cond);
    hu.push_back(r.entropy_uncond);
    hg.push_back(r.entropy_guided);
  }
  const double n = static_cast<double>(steps.size());
  s.mean_guided_logprob /= n;
  s.mean_entropy_cond /= n;
  s.mean_entropy_uncond /= n;
  s.mean_entropy_guided /= n;
  s.mean_overlap_cond /= n;
  s.mean_overlap_uncond /= n;
  s.median_entropy_cond = median(std::move(hc));
  s.median_entropy_uncond = median(std::move(hu));
  s.median_entropy_guided = median(std::move(hg));
  return s;
}

void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& steps,
                     EntropyUnit unit) {
  const double s = scale(unit);
  write_steps(out, steps, s);
  if (steps.empty()) return;
  const auto sum = trace_summary(steps);
  write_row(out, "mean", "", sum.mean_guided_logprob, sum.mean_entropy_cond * s,
            sum.mean_entropy_uncond * s, sum.mean_entropy_guided * s,
            fmt(sum.mean_overlap_cond), fmt(sum.mean_overlap_uncond));
}

void write_summary_csv(std::ostream& out, const TraceSummary& summary,
                       EntropyUnit unit) {
  const double s = scale(unit);
  write_steps(out, summary.rows, s);
  write_row(out, "mean", "", summary.mean_guided_logprob,
            summary.mean_entropy_cond * s, summary.mean_entropy_uncond * s,
            summary.mean_entropy_guided * s, fmt(summary.mean_overlap_cond),
            fmt(summary.mean_overlap_uncond));
  std::vector<double> lp;
  for (const auto& r : summary.rows) lp.push_back(r.guided_logprob);
  write_row(out, "median", "", median(std::move(lp)),
            summary.median_entropy_cond * s, summary.median_entropy_uncond * s,
            summary.median_entropy_guided * s, "", "");
}

std::vector<StepRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::EmptyTrace, "trace file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceCsvHeader) {
    throw Error(ErrorKind::Format, "unexpected trace header '" + line + "'");
  }
  std::vector<StepRecord> steps;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 8) {
      throw Error(ErrorKind::Format,
                  "trace line " + std::to_string(line_no) + ": expected 8 fields");
    }
    if (f[0] == "mean" || f[0] == "median") continue;
    StepRecord r;
    r.token = parse_number<TokenId>(f[1], line_no);
    r.guided_logprob = parse_number<double>(f[2], line_no);
    r.entropy_cond = parse_number<double>(f[3], line_no);
    r.entropy_uncond = parse_number<double>(f[4], line_no);
    r.entropy_guided = parse_number<double>(f[5], line_no);
    r.overlap_cond = parse_number<std::size_t>(f[6], line_no);
    r.overlap_uncond = parse_number<std::size_t>(f[7], line_no);
    steps.push_back(r);
  }
  if (steps.empty()) throw Error(ErrorKind::EmptyTrace, "trace has no steps");
  return steps;
}

std::vector<StepRecord> load_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return read_trace_csv(in);
}

}  // namespace cfgdecode
