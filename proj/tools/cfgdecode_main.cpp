// cfgdecode: train n-gram backends, run guided generation, score
// multiple-choice task files, compute pass@k and summarize decoding traces.
//
// Exit codes: 0 success, 2 usage/validation, 3 IO, 4 runtime/service.

#include <signal.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cfgdecode/analysis.hpp"
#include "cfgdecode/backends.hpp"
#include "cfgdecode/decoding.hpp"
#include "cfgdecode/scoring.hpp"
#include "cfgdecode/service.hpp"

namespace {

using namespace cfgdecode;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitRuntime = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Format:
      return kExitIo;
    case ErrorKind::Timeout:
    case ErrorKind::BadResponse:
    case ErrorKind::TransportError:
    case ErrorKind::AllNegInfinity:
      return kExitRuntime;
    default:
      return kExitUsage;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <class Write>
void write_file(const std::string& path, Write write) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  write(out);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::BadLambdas, "cannot parse weight '" + item + "'");
    }
  }
  return out;
}

// Guidance flags shared by generate and score.
struct GuidanceFlags {
  double gamma = 1.0;
  std::string mode;
  std::optional<std::string> negative_prompt;
  std::size_t split = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--gamma", gamma, "Guidance strength (1 = plain conditional)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--mode", mode,
                    "Unconditional context: last-token | negative-prompt | custom-split");
    cmd->add_option("--negative-prompt", negative_prompt,
                    "Negative prompt text (implies --mode negative-prompt)");
    cmd->add_option("--split", split, "Prompt index where the custom-split uncond starts");
  }

  GuidanceConfig to_config() const {
    GuidanceConfig cfg;
    cfg.gamma = gamma;
    if (!mode.empty()) {
      cfg.mode = parse_context_mode(mode);
    } else if (negative_prompt) {
      cfg.mode = ContextMode::NegativePrompt;
    }
    if (negative_prompt) cfg.negative_prompt = encode(*negative_prompt);
    cfg.split_index = split;
    return cfg;
  }
};

struct TrainArgs {
  std::string corpus;
  int order = 4;
  double k = NGramModel::kDefaultK;
  std::string lambdas;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  const std::string corpus = read_file(a.corpus);
  auto lambdas = a.lambdas.empty() ? std::vector<double>{} : parse_lambdas(a.lambdas);
  const auto model = NGramModel::train(corpus, a.order, a.k, std::move(lambdas));
  model.save(a.out);
  std::cerr << "trained order-" << model.order() << " model on " << corpus.size()
            << " bytes -> " << a.out << "\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string model;
  std::optional<std::string> prompt;
  std::string prompt_file;
  GuidanceFlags guidance;
  std::optional<double> temperature;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::uint64_t seed = 0;
  std::size_t max_tokens = 64;
  std::vector<std::string> stop;
  std::string trace_out;
  double diag_p = kDiagnosticTopP;
  bool bits = false;
};

int cmd_generate(const GenerateArgs& a) {
  if (!a.prompt && a.prompt_file.empty()) {
    throw Error(ErrorKind::InvalidArgs, "one of --prompt or --prompt-file is required");
  }
  const std::string prompt_text = a.prompt ? *a.prompt : read_file(a.prompt_file);
  GuidanceConfig config = a.guidance.to_config();
  config.sampler = make_sampler_config(a.temperature, a.top_k, a.top_p, a.seed);
  config.diagnostic_top_p = a.diag_p;
  validate(config);

  const auto model = open_model(a.model);
  std::vector<TokenSeq> stops;
  for (const auto& s : a.stop) stops.push_back(encode(s));

  GenerationTrace trace;
  try {
    trace = generate(*model, encode(prompt_text), config, a.max_tokens, stops);
  } catch (const GenerationError& e) {
    std::cout << decode(e.partial_trace().tokens(), SpecialTokens::Skip) << "\n";
    throw;
  }
  std::cout << decode(trace.tokens(), SpecialTokens::Skip) << "\n";
  if (!a.trace_out.empty()) {
    write_file(a.trace_out, [&](std::ostream& out) {
      write_trace_csv(out, trace.steps, a.bits ? EntropyUnit::Bits : EntropyUnit::Nats);
    });
  }
  std::cerr << "steps=" << trace.steps.size()
            << " stop=" << to_string(trace.stop_reason) << "\n";
  return kExitOk;
}

struct ScoreArgs {
  std::string model;
  std::string tasks;
  GuidanceFlags guidance;
  std::string norm = "bytes";
  std::string out;
  std::string csv;
  unsigned threads = 1;
};

int cmd_score(const ScoreArgs& a) {
  const auto tasks = load_tasks(a.tasks);
  const GuidanceConfig config = a.guidance.to_config();
  const auto model = open_model(a.model);
  const auto report = evaluate_taskset(*model, tasks, config, EvalOptions{a.threads});

  const std::string rendered = render_score_report(report);
  if (a.out.empty()) {
    std::cout << rendered;
  } else {
    write_file(a.out, [&](std::ostream& out) { out << rendered; });
  }
  if (!a.csv.empty()) {
    write_file(a.csv, [&](std::ostream& out) { out << report.to_csv(); });
  }
  const double headline = a.norm == "raw" ? report.acc : report.acc_norm;
  std::cerr << "tasks=" << report.tasks.size() << " gamma=" << report.gamma
            << " acc=" << report.acc << " acc_norm=" << report.acc_norm << " ["
            << a.norm << "]=" << headline << "\n";
  return kExitOk;
}

struct PassKArgs {
  std::string input;
  std::vector<std::int64_t> ks{1};
};

int cmd_passk(const PassKArgs& a) {
  const auto rows = load_pass_at_k_inputs(a.input);
  // Validate everything before printing anything.
  std::vector<double> aggregates;
  for (auto k : a.ks) aggregates.push_back(aggregate_pass_at_k(rows, k));

  std::cout << "task_id,n,c";
  for (auto k : a.ks) std::cout << ",pass@" << k;
  std::cout << "\n";
  char buf[32];
  for (const auto& row : rows) {
    std::cout << row.task_id << "," << row.n << "," << row.c;
    for (auto k : a.ks) {
      std::snprintf(buf, sizeof(buf), "%.6f", pass_at_k(row.n, row.c, k));
      std::cout << "," << buf;
    }
    std::cout << "\n";
  }
  std::cout << "mean,,";
  for (double v : aggregates) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    std::cout << "," << buf;
  }
  std::cout << "\n";
  return kExitOk;
}

struct AnalyzeArgs {
  std::string trace;
  double p = kDiagnosticTopP;
  bool bits = false;
  std::string out;
};

int cmd_analyze(const AnalyzeArgs& a) {
  if (!(a.p > 0.0 && a.p <= 1.0)) {
    throw Error(ErrorKind::InvalidArgs, "--p must be in (0, 1]");
  }
  const auto summary = trace_summary(load_trace_csv(a.trace));
  const auto unit = a.bits ? EntropyUnit::Bits : EntropyUnit::Nats;
  if (a.out.empty()) {
    write_summary_csv(std::cout, summary, unit);
  } else {
    write_file(a.out, [&](std::ostream& out) { write_summary_csv(out, summary, unit); });
  }
  std::cerr << "steps=" << summary.step_count << " top_p=" << a.p
            << " units=" << (a.bits ? "bits" : "nats")
            << " averaging=per-token-pooled\n";
  return kExitOk;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string models;
  unsigned max_concurrency = 8;
};

int cmd_serve(const ServeArgs& a) {
  ModelRegistry registry =
      a.models.empty() ? ModelRegistry{} : ModelRegistry::load(a.models);

  // Handle SIGINT/SIGTERM on a dedicated thread; the server's workers
  // inherit the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(std::move(registry),
                ServerOptions{.host = a.host,
                              .port = a.port,
                              .max_concurrency = a.max_concurrency});
  int port = 0;
  try {
    port = server.bind();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;

  std::thread watcher([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  // Wake the watcher if the server stopped for another reason.
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classifier-free guidance decoding toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file providing default flag values");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train an n-gram byte model");
  train_cmd->add_option("corpus", train.corpus, "Corpus text file")->required();
  train_cmd->add_option("--order", train.order, "n-gram order")->capture_default_str();
  train_cmd->add_option("--k", train.k, "Add-k smoothing constant")->capture_default_str();
  train_cmd->add_option("--lambdas", train.lambdas,
                        "Comma-separated interpolation weights, lowest order first");
  train_cmd->add_option("--out", train.out, "Output model file")->required();

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Guided generation from a prompt");
  gen_cmd->add_option("--model", gen.model, "Model file or http:// endpoint")->required();
  gen_cmd->add_option("--prompt", gen.prompt, "Prompt text");
  gen_cmd->add_option("--prompt-file", gen.prompt_file, "Read the prompt from a file");
  gen.guidance.add_to(gen_cmd);
  gen_cmd->add_option("--temperature", gen.temperature, "Sampling temperature (0 = greedy)");
  gen_cmd->add_option("--top-k", gen.top_k, "Top-k truncation");
  gen_cmd->add_option("--top-p", gen.top_p, "Nucleus truncation mass");
  gen_cmd->add_option("--seed", gen.seed, "Sampler seed")->capture_default_str();
  gen_cmd->add_option("--max-tokens", gen.max_tokens, "Token budget")->capture_default_str();
  gen_cmd->add_option("--stop", gen.stop, "Stop sequence (repeatable)");
  gen_cmd->add_option("--trace-out", gen.trace_out, "Write the per-step trace CSV");
  gen_cmd->add_option("--diag-p", gen.diag_p, "Top-p mass for overlap diagnostics")
      ->capture_default_str();
  gen_cmd->add_flag("--bits", gen.bits, "Report entropies in bits");

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score a multiple-choice task file");
  score_cmd->add_option("--model", score.model, "Model file or http:// endpoint")->required();
  score_cmd->add_option("--tasks", score.tasks, "NDJSON task file")->required();
  score.guidance.add_to(score_cmd);
  score_cmd->add_option("--norm", score.norm, "Headline metric: raw | bytes")
      ->check(CLI::IsMember({"raw", "bytes"}))
      ->capture_default_str();
  score_cmd->add_option("--out", score.out, "Write the JSON report here (default stdout)");
  score_cmd->add_option("--csv", score.csv, "Also write the report as CSV");
  score_cmd->add_option("--threads", score.threads, "Worker threads")->capture_default_str();

  PassKArgs passk;
  auto* passk_cmd = app.add_subcommand("passk", "Unbiased pass@k from pass counts");
  passk_cmd->add_option("--input", passk.input, "NDJSON {task_id,n,c} file")->required();
  passk_cmd->add_option("--k", passk.ks, "k values (repeatable)")->capture_default_str();

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Summarize a trace CSV");
  analyze_cmd->add_option("--trace", analyze.trace, "Trace CSV from generate")->required();
  analyze_cmd->add_option("--p", analyze.p, "Top-p mass the overlap columns were recorded at")
      ->capture_default_str();
  analyze_cmd->add_flag("--bits", analyze.bits, "Report entropies in bits");
  analyze_cmd->add_option("--out", analyze.out, "Write the summary here (default stdout)");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP generation/scoring service");
  serve_cmd->add_option("--host", serve.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", serve.port, "Port (0 = any free port)")->capture_default_str();
  serve_cmd->add_option("--models", serve.models, "Model registry config (JSON)");
  serve_cmd->add_option("--max-concurrency", serve.max_concurrency, "Worker threads")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*gen_cmd) return cmd_generate(gen);
    if (*score_cmd) return cmd_score(score);
    if (*passk_cmd) return cmd_passk(passk);
    if (*analyze_cmd) return cmd_analyze(analyze);
    if (*serve_cmd) return cmd_serve(serve);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
