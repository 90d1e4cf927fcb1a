#include "cfgdecode/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace cfgdecode {
namespace {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class Parse>
auto parse_ndjson(std::istream& in, Parse parse_line) {
  using Item = decltype(parse_line(nlohmann::json{}, std::size_t{}));
  std::vector<Item> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFileError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw MalformedFileError(line_no, "expected an object");
    try {
      out.push_back(parse_line(doc, line_no));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFileError(line_no, e.what());
    } catch (const MalformedFileError&) {
      throw;
    } catch (const Error& e) {
      throw MalformedFileError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace

void validate(const MCTask& task) {
  if (task.prompt.empty()) {
    throw Error(ErrorKind::InvalidArgs, "task '" + task.id + "' has an empty prompt");
  }
  if (task.choices.size() < 2) {
    throw Error(ErrorKind::InvalidArgs, "task '" + task.id + "' needs >= 2 choices");
  }
  for (const auto& choice : task.choices) {
    if (choice.empty()) {
      throw Error(ErrorKind::InvalidArgs, "task '" + task.id + "' has an empty choice");
    }
  }
  if (task.answer_index >= task.choices.size()) {
    throw Error(ErrorKind::InvalidArgs, "task '" + task.id + "' answer out of range");
  }
}

double cfg_continuation_logprob(const LanguageModel& model,
                                std::span<const TokenId> prompt,
                                std::span<const TokenId> continuation,
                                const GuidanceConfig& config) {
  if (continuation.empty()) {
    throw Error(ErrorKind::InvalidArgs, "continuation is empty");
  }
  validate_tokens(continuation, model.vocab_size());
  DualContext ctx = init_dual_context(prompt, config);
  double total = 0.0;
  for (TokenId token : continuation) {
    const auto dists = guided_distributions(model, ctx, config.gamma);
    total += dists.guided[static_cast<std::size_t>(token)];
    ctx.append(token);
  }
  return total;
}

TaskResult score_mc_task(const LanguageModel& model, const MCTask& task,
                         const GuidanceConfig& config) {
  validate(task);
  const TokenSeq prompt = encode(task.prompt);
  TaskResult result;
  result.id = task.id;
  result.answer_index = task.answer_index;
  for (const auto& choice : task.choices) {
    ChoiceScore score;
    score.loglik = cfg_continuation_logprob(model, prompt, encode(choice), config);
    score.loglik_norm = score.loglik / static_cast<double>(choice.size());
    result.choices.push_back(score);
  }
  for (std::size_t i = 1; i < result.choices.size(); ++i) {
    if (result.choices[i].loglik > result.choices[result.prediction].loglik) {
      result.prediction = i;
    }
    if (result.choices[i].loglik_norm >
        result.choices[result.prediction_norm].loglik_norm) {
      result.prediction_norm = i;
    }
  }
  result.correct = result.prediction == task.answer_index;
  result.correct_norm = result.prediction_norm == task.answer_index;
  return result;
}

ScoreReport evaluate_taskset(const LanguageModel& model,
                             const std::vector<MCTask>& tasks,
                             const GuidanceConfig& config, EvalOptions options) {
  if (tasks.empty()) throw Error(ErrorKind::EmptyTaskSet, "no tasks to evaluate");
  validate(config);

  ScoreReport report;
  report.model_name = model.name();
  report.model_type = model.type();
  report.gamma = config.gamma;
  report.mode = config.mode;
  report.tasks.resize(tasks.size());

  const unsigned workers =
      std::clamp<unsigned>(options.threads, 1, static_cast<unsigned>(tasks.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      report.tasks[i] = score_mc_task(model, tasks[i], config);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
          try {
            report.tasks[i] = score_mc_task(model, tasks[i], config);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = tasks.size();
          }
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  std::size_t correct = 0;
  std::size_t correct_norm = 0;
  for (const auto& t : report.tasks) {
    correct += t.correct ? 1 : 0;
    correct_norm += t.correct_norm ? 1 : 0;
  }
  report.acc = static_cast<double>(correct) / static_cast<double>(tasks.size());
  report.acc_norm =
      static_cast<double>(correct_norm) / static_cast<double>(tasks.size());
  return report;
}

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : tasks) {
    nlohmann::json choices = nlohmann::json::array();
    for (const auto& c : t.choices) {
      choices.push_back({{"loglik", c.loglik}, {"loglik_norm", c.loglik_norm}});
    }
    rows.push_back({{"id", t.id},
                    {"answer", t.answer_index},
                    {"prediction", t.prediction},
                    {"prediction_norm", t.prediction_norm},
                    {"correct", t.correct},
                    {"correct_norm", t.correct_norm},
                    {"choices", std::move(choices)}});
  }
  return {{"model", {{"name", model_name}, {"type", model_type}}},
          {"gamma", gamma},
          {"context_mode", std::string(to_string(mode))},
          {"norm", "bytes"},
          {"num_tasks", tasks.size()},
          {"acc", acc},
          {"acc_norm", acc_norm},
          {"tasks", std::move(rows)}};
}

std::string ScoreReport::to_csv() const {
  std::ostringstream os;
  os << "id,answer,prediction,prediction_norm,correct,correct_norm,loglik,loglik_norm\n";
  for (const auto& t : tasks) {
    std::string ll;
    std::string ll_norm;
    for (std::size_t i = 0; i < t.choices.size(); ++i) {
      if (i > 0) {
        ll += ';';
        ll_norm += ';';
      }
      ll += format_double(t.choices[i].loglik);
      ll_norm += format_double(t.choices[i].loglik_norm);
    }
    os << csv_escape(t.id) << ',' << t.answer_index << ',' << t.prediction << ','
       << t.prediction_norm << ',' << (t.correct ? 1 : 0) << ','
       << (t.correct_norm ? 1 : 0) << ',' << ll << ',' << ll_norm << '\n';
  }
  os << "acc," << format_double(acc) << ",,,,,,\n";
  os << "acc_norm," << format_double(acc_norm) << ",,,,,,\n";
  return os.str();
}

std::vector<MCTask> parse_tasks(std::istream& in) {
  auto tasks = parse_ndjson(in, [](const nlohmann::json& doc, std::size_t line) {
    MCTask task;
    task.id = doc.contains("id") ? doc.at("id").get<std::string>()
                                 : "line-" + std::to_string(line);
    task.prompt = doc.at("prompt").get<std::string>();
    task.choices = doc.at("choices").get<std::vector<std::string>>();
    const auto answer = doc.at("answer").get<std::int64_t>();
    if (answer < 0) throw MalformedFileError(line, "answer must be >= 0");
    task.answer_index = static_cast<std::size_t>(answer);
    validate(task);
    return task;
  });
  if (tasks.empty()) throw Error(ErrorKind::EmptyTaskSet, "task file has no tasks");
  return tasks;
}

std::vector<MCTask> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return parse_tasks(in);
}

double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n) {
    throw Error(ErrorKind::InvalidArgs,
                "pass@k needs 0 <= c <= n and 1 <= k <= n (n=" + std::to_string(n) +
                    ", c=" + std::to_string(c) + ", k=" + std::to_string(k) + ")");
  }
  if (n - c < k) return 1.0;
  double all_fail = 1.0;
  for (std::int64_t i = 0; i < k; ++i) {
    all_fail *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  }
  return 1.0 - all_fail;
}

double aggregate_pass_at_k(const std::vector<PassAtKInput>& inputs,
                           std::int64_t k) {
  if (inputs.empty()) throw Error(ErrorKind::InvalidArgs, "no pass@k inputs");
  double sum = 0.0;
  for (const auto& in : inputs) sum += pass_at_k(in.n, in.c, k);
  return sum / static_cast<double>(inputs.size());
}

std::vector<PassAtKInput> parse_pass_at_k_inputs(std::istream& in) {
  auto rows = parse_ndjson(in, [](const nlohmann::json& doc, std::size_t line) {
    PassAtKInput row;
    row.task_id = doc.contains("task_id") ? doc.at("task_id").get<std::string>()
                                          : "line-" + std::to_string(line);
    row.n = doc.at("n").get<std::int64_t>();
    row.c = doc.at("c").get<std::int64_t>();
    if (row.n < 1 || row.c < 0 || row.c > row.n) {
      throw MalformedFileError(line, "need n >= 1 and 0 <= c <= n");
    }
    return row;
  });
  if (rows.empty()) throw Error(ErrorKind::InvalidArgs, "pass@k file has no rows");
  return rows;
}

std::vector<PassAtKInput> load_pass_at_k_inputs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return parse_pass_at_k_inputs(in);
}

}  // namespace cfgdecode
