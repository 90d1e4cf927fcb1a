// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   cfgdecode_acceptance [--out-dir DIR] [--only NAME]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfgdecode/analysis.hpp"
#include "cfgdecode/decoding.hpp"
#include "cfgdecode/diagnostics.hpp"
#include "cfgdecode/logprob.hpp"
#include "cfgdecode/scoring.hpp"
#include "cfgdecode/service.hpp"
#include "support/oracles.hpp"
#include "support/subprocess.hpp"
#include "support/synthetic.hpp"

using namespace cfgdecode;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;  // 0 = none
  std::function<Outcome()> run;
};

fs::path g_out_dir;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double max_prob_error(const LogProbVector& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    worst = std::max(worst, std::abs(std::exp(got[i]) - want[i]));
  }
  return worst;
}

double max_log_error(const LogProbVector& a, const LogProbVector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

// Random table whose default and one context entry supply a (c, u) pair.
std::pair<LogProbVector, LogProbVector> table_pair(std::mt19937_64& rng, std::size_t vocab) {
  TableModel t(1, oracle::random_distribution(vocab, rng),
               {{{0}, oracle::random_distribution(vocab, rng)}});
  return {t.next_logprobs(TokenSeq{0}), t.next_logprobs(TokenSeq{})};
}

const NGramModel& corpus_model() {
  static const NGramModel model = [] {
    std::ifstream in(CFGDECODE_CORPUS, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return NGramModel::train(buf.str(), 4);
  }();
  return model;
}

// 50 prompts: 48-byte windows starting at evenly spaced line starts.
std::vector<std::string> corpus_prompts(std::size_t count) {
  std::ifstream in(CFGDECODE_CORPUS, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<std::string> out;
  const std::size_t stride = text.size() / (count + 1);
  for (std::size_t i = 1; out.size() < count; ++i) {
    std::size_t pos = text.find('\n', i * stride);
    while (pos < text.size() && (text[pos] == '\n' || text[pos] == '\r')) ++pos;
    out.push_back(text.substr(pos, 48));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome identity_reductions() {
  std::mt19937_64 rng(101);
  double err1 = 0.0, err0 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto [c, u] = table_pair(rng, i % 2 == 0 ? 3 : 258);
    err1 = std::max(err1, max_log_error(guide(c, u, 1.0), c));
    err0 = std::max(err0, max_log_error(guide(c, u, 0.0), u));
  }
  int mismatched = 0;
  for (int i = 0; i < 100; ++i) {
    const auto model = synthetic::alphabet_table(rng, "abcde", 2);
    const auto prompt = encode(synthetic::random_word(rng, "abcde", 1, 12));
    GuidanceConfig cfg;
    const auto trace = generate(model, prompt, cfg, 24);
    if (trace.tokens() != oracle::vanilla_greedy(model, prompt, 24)) ++mismatched;
  }
  const bool pass = err1 <= 1e-12 && err0 <= 1e-12 && mismatched == 0;
  return {pass, fmt("max err gamma=1 %.3g, gamma=0 %.3g; greedy mismatches %d/100", err1,
                    err0, mismatched)};
}

Outcome closed_form_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> gamma_dist(0.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t vocab = i % 2 == 0 ? 3 : 258;
    const auto c = oracle::random_distribution(vocab, rng);
    const auto u = oracle::random_distribution(vocab, rng);
    const double gamma = gamma_dist(rng);
    worst = std::max(worst, max_prob_error(guide(LogProbVector::from_probs(c),
                                                 LogProbVector::from_probs(u), gamma),
                                           oracle::guided_probs(c, u, gamma)));
  }
  const auto worked = guide(LogProbVector::from_probs(std::vector<double>{0.2, 0.5, 0.3}),
                            LogProbVector::from_probs(std::vector<double>{0.5, 0.3, 0.2}), 2.0);
  const double worked_err =
      max_prob_error(worked, {24.0 / 409.0, 250.0 / 409.0, 135.0 / 409.0});
  const bool pass = worst <= 1e-9 && worked_err <= 1e-9;
  return {pass, fmt("max |p - oracle| %.3g over 1000 cases; worked V=3 example err %.3g", worst,
                    worked_err)};
}

Outcome shift_invariance() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> logit(0.0, 4.0);
  std::uniform_real_distribution<double> shift(-1000.0, 1000.0);
  std::uniform_real_distribution<double> gamma_dist(0.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t vocab = i % 2 == 0 ? 3 : 258;
    std::vector<double> lc(vocab), lu(vocab);
    for (auto& v : lc) v = logit(rng);
    for (auto& v : lu) v = logit(rng);
    const double gamma = gamma_dist(rng);
    const auto base = guide(normalize(lc), normalize(lu), gamma);
    const double a = shift(rng), b = shift(rng);
    for (auto& v : lc) v += a;
    for (auto& v : lu) v += b;
    worst = std::max(worst, max_log_error(guide(normalize(lc), normalize(lu), gamma), base));
  }
  return {worst <= 1e-9, fmt("max guided log-prob change %.3g over 1000 cases", worst)};
}

Outcome pass_at_k_exactness() {
  double worst = 0.0;
  int monotone_violations = 0;
  int cases = 0;
  for (int n = 1; n <= 8; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        ++cases;
        const double v = pass_at_k(n, c, k);
        worst = std::max(worst, std::abs(v - oracle::pass_at_k_enumerated(n, c, k)));
        if (k > 1 && v < pass_at_k(n, c, k - 1)) ++monotone_violations;
        if (c > 0 && v < pass_at_k(n, c - 1, k)) ++monotone_violations;
      }
    }
  }
  const double example = pass_at_k(5, 2, 3);
  const bool pass = worst <= 1e-12 && monotone_violations == 0 && std::abs(example - 0.9) <= 1e-12;
  return {pass, fmt("%d cases, max err %.3g, monotonicity violations %d, pass@3(5,2)=%.15g",
                    cases, worst, monotone_violations, example)};
}

Outcome scoring_equivalence() {
  std::mt19937_64 rng(404);
  const auto model = synthetic::alphabet_table(rng, "abcd", 3);
  const auto tasks = synthetic::mc_tasks(rng, 200, "abcd");
  GuidanceConfig cfg;
  const auto report = evaluate_taskset(model, tasks, cfg, {.threads = 4});
  int diff = 0, diff_norm = 0;
  std::size_t plain_correct = 0, plain_correct_norm = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto p = synthetic::plain_prediction(model, tasks[i], false);
    const auto pn = synthetic::plain_prediction(model, tasks[i], true);
    diff += report.tasks[i].prediction != p;
    diff_norm += report.tasks[i].prediction_norm != pn;
    plain_correct += p == tasks[i].answer_index;
    plain_correct_norm += pn == tasks[i].answer_index;
  }
  const auto json = report.to_json();
  const bool reported = json.contains("acc") && json.contains("acc_norm");
  const bool acc_match = report.acc == static_cast<double>(plain_correct) / 200.0 &&
                         report.acc_norm == static_cast<double>(plain_correct_norm) / 200.0;
  {
    std::ofstream out(g_out_dir / "scoring_gamma1.json");
    out << render_score_report(report);
  }
  const bool pass = diff == 0 && diff_norm == 0 && reported && acc_match;
  return {pass, fmt("200 tasks: prediction diffs %d (raw) %d (norm); acc=%.3f acc_norm=%.3f", diff,
                    diff_norm, report.acc, report.acc_norm)};
}

Outcome negative_prompt_degeneracy() {
  const auto model = std::make_shared<NGramModel>(corpus_model());
  ModelRegistry registry;
  registry.add(ModelSpec{.name = "moby", .type = "ngram"}, model);

  int mismatches = 0;
  int runs = 0;
  const auto prompts = corpus_prompts(5);
  for (double gamma : {0.0, 1.0, 2.0, 4.0}) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      // Service path: negative system prompt equal to the system prompt.
      GenerateRequest req;
      req.system_prompt = kDefaultSystemPrompt;
      req.negative_system_prompt = std::string(kDefaultSystemPrompt);
      req.messages = {{Role::User, prompts[i]}};
      req.gamma = gamma;
      req.max_tokens = 48;
      req.sampler = SamplerConfig{TopP{0.95, 0.9}, 1000 + i};
      TokenSeq guided, plain;
      handle_generate(registry, req, [&](const StreamEvent& ev) {
        if (!ev.done) guided.push_back(ev.token);
        return true;
      });
      auto cond_req = req;
      cond_req.gamma = 1.0;
      cond_req.negative_system_prompt.reset();
      handle_generate(registry, cond_req, [&](const StreamEvent& ev) {
        if (!ev.done) plain.push_back(ev.token);
        return true;
      });

      // Library path: negative prompt = rendering minus its last token.
      const auto prompt = encode(prompts[i]);
      GuidanceConfig cfg;
      cfg.gamma = gamma;
      cfg.mode = ContextMode::NegativePrompt;
      cfg.negative_prompt = TokenSeq(prompt.begin(), prompt.end() - 1);
      cfg.sampler = req.sampler;
      GuidanceConfig cond_cfg;
      cond_cfg.sampler = req.sampler;
      const auto lib = generate(*model, prompt, cfg, 48).tokens();
      const auto lib_plain = generate(*model, prompt, cond_cfg, 48).tokens();

      runs += 2;
      mismatches += guided != plain;
      mismatches += lib != lib_plain;
    }
  }
  return {mismatches == 0,
          fmt("%d/%d runs token-identical for gamma in {0,1,2,4}", runs - mismatches, runs)};
}

Outcome entropy_replication() {
  const auto& model = corpus_model();
  const auto prompts = corpus_prompts(50);
  std::vector<StepRecord> base_steps, guided_steps;
  std::size_t sanity_checks = 0, sanity_failures = 0;

  std::ofstream csv(g_out_dir / "entropy_overlap.csv");
  csv << "prompt,gamma,step,token,H_cond,H_uncond,H_guided,ovl_cond,ovl_uncond,"
         "top_p_cond,top_p_uncond,top_p_guided\n";

  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (double gamma : {1.0, 1.5}) {
      GuidanceConfig cfg;
      cfg.gamma = gamma;
      GuidedDecoder dec(model, encode(prompts[i]), cfg, 64);
      std::size_t step = 0;
      while (!dec.finished()) {
        // Recompute the step's distributions for the set-size columns and
        // the overlap(x, x) check.
        const auto dists = guided_distributions(model, dec.context(), gamma);
        const auto rec = *dec.next();
        const std::size_t nc = top_p_set(dists.cond, kDiagnosticTopP).size();
        const std::size_t nu = top_p_set(dists.uncond, kDiagnosticTopP).size();
        const std::size_t ng = top_p_set(dists.guided, kDiagnosticTopP).size();
        sanity_checks += 3;
        sanity_failures += top_p_overlap(dists.cond, dists.cond, kDiagnosticTopP) != nc;
        sanity_failures += top_p_overlap(dists.uncond, dists.uncond, kDiagnosticTopP) != nu;
        sanity_failures += top_p_overlap(dists.guided, dists.guided, kDiagnosticTopP) != ng;
        csv << i << ',' << gamma << ',' << step++ << ',' << rec.token << ','
            << fmt("%.10g,%.10g,%.10g", rec.entropy_cond, rec.entropy_uncond,
                   rec.entropy_guided)
            << ',' << rec.overlap_cond << ',' << rec.overlap_uncond << ',' << nc << ',' << nu
            << ',' << ng << '\n';
        (gamma == 1.0 ? base_steps : guided_steps).push_back(rec);
      }
    }
  }
  const auto base = trace_summary(base_steps);
  const auto guided = trace_summary(guided_steps);
  {
    std::ofstream summary(g_out_dir / "entropy_summary.csv");
    summary << "run,tokens,mean_H_cond,mean_H_guided,median_H_cond,median_H_guided,"
               "mean_ovl_cond,mean_ovl_uncond\n";
    for (const auto& [name, s] : {std::pair{"gamma=1", base}, std::pair{"gamma=1.5", guided}}) {
      summary << name << ',' << s.step_count << ','
              << fmt("%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", s.mean_entropy_cond,
                     s.mean_entropy_guided, s.median_entropy_cond, s.median_entropy_guided,
                     s.mean_overlap_cond, s.mean_overlap_uncond)
              << '\n';
    }
  }
  const bool pass = guided.mean_entropy_guided < base.mean_entropy_cond && sanity_failures == 0 &&
                    base.step_count == 50 * 64 && guided.step_count == 50 * 64;
  return {pass, fmt("pooled mean H_guided(1.5)=%.4f vs H_cond(1)=%.4f nats over %zu tokens; "
                    "overlap(x,x) checks %zu/%zu; CSV at %s",
                    guided.mean_entropy_guided, base.mean_entropy_cond, guided.step_count,
                    sanity_checks - sanity_failures, sanity_checks,
                    (g_out_dir / "entropy_overlap.csv").c_str())};
}

Outcome cli_determinism() {
  const fs::path dir = g_out_dir / "determinism";
  fs::create_directories(dir);
  const auto model = dir / "moby4.bin";
  corpus_model().save(model);
  auto args = [&](const fs::path& trace) {
    return std::vector<std::string>{
        "generate", "--model", model.string(), "--prompt", "Call me Ishmael. Some years ago",
        "--gamma", "1.5", "--temperature", "0.9", "--top-p", "0.95", "--seed", "42",
        "--max-tokens", "64", "--trace-out", trace.string()};
  };
  const auto r1 = subprocess::run(CFGDECODE_CLI, args(dir / "trace1.csv"), dir);
  const auto r2 = subprocess::run(CFGDECODE_CLI, args(dir / "trace2.csv"), dir);
  const auto t1 = subprocess::slurp(dir / "trace1.csv");
  const auto t2 = subprocess::slurp(dir / "trace2.csv");
  const bool pass =
      r1.code == 0 && r2.code == 0 && r1.out == r2.out && !t1.empty() && t1 == t2;
  return {pass, fmt("exit %d/%d; stdout %s (%zu bytes); trace %s (%zu bytes)", r1.code, r2.code,
                    r1.out == r2.out ? "identical" : "DIFFERS", r1.out.size(),
                    t1 == t2 ? "identical" : "DIFFERS", t1.size())};
}

}  // namespace

int main(int argc, char** argv) {
  g_out_dir = fs::temp_directory_path() / "cfgdecode_acceptance";
  std::string only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--out-dir") g_out_dir = argv[i + 1];
    else if (flag == "--only") only = argv[i + 1];
  }
  fs::create_directories(g_out_dir);

  const std::vector<Criterion> criteria{
      {"identity-reductions", 5.0, identity_reductions},
      {"closed-form-oracle", 5.0, closed_form_oracle},
      {"shift-invariance", 0.0, shift_invariance},
      {"pass-at-k-exactness", 1.0, pass_at_k_exactness},
      {"scoring-equivalence", 0.0, scoring_equivalence},
      {"negative-prompt-degeneracy", 0.0, negative_prompt_degeneracy},
      {"entropy-reduction-4gram", 60.0, entropy_replication},
      {"cli-determinism", 0.0, cli_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt("%.2fs", secs);
    if (c.time_limit_s > 0) {
      timing += fmt(" (limit %.0fs)", c.time_limit_s);
      if (secs >= c.time_limit_s) {
        o.pass = false;
        o.detail += "; over time limit";
      }
    }
    failures += !o.pass;
    std::printf("[%s] %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(),
                o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
