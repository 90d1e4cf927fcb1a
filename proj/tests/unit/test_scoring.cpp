#include <cmath>
#include <random>
#include <sstream>

#include "cfgdecode/scoring.hpp"
#include "doctest.h"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace cfgdecode;

namespace {

std::vector<double> byte_dist(std::initializer_list<std::pair<char, double>> mass) {
  std::vector<double> p(kVocabSize, 0.0);
  for (auto [ch, m] : mass) p[static_cast<unsigned char>(ch)] = m;
  return p;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidArgs;
}

}  // namespace

TEST_CASE("continuation log-prob at gamma=1 equals the plain log-likelihood") {
  std::mt19937_64 rng(21);
  const auto model = synthetic::alphabet_table(rng, "abcd", 2);
  GuidanceConfig cfg;
  for (int i = 0; i < 50; ++i) {
    const auto prompt = encode(synthetic::random_word(rng, "abcd", 1, 8));
    const auto cont = encode(synthetic::random_word(rng, "abcd", 1, 6));
    CHECK(cfg_continuation_logprob(model, prompt, cont, cfg) ==
          doctest::Approx(oracle::plain_loglik(model, prompt, cont)).epsilon(1e-12));
  }
}

TEST_CASE("two-token continuation against a hand-computed guided sum") {
  TableModel model(2, byte_dist({{'a', 0.25}, {'b', 0.25}, {'c', 0.5}}),
                   {{encode("xa"), byte_dist({{'a', 0.2}, {'b', 0.6}, {'c', 0.2}})},
                    {encode("a"), byte_dist({{'a', 0.5}, {'b', 0.3}, {'c', 0.2}})},
                    {encode("ab"), byte_dist({{'a', 0.1}, {'b', 0.1}, {'c', 0.8}})},
                    {encode("b"), byte_dist({{'a', 0.4}, {'b', 0.2}, {'c', 0.4}})}});
  GuidanceConfig cfg;
  cfg.gamma = 2.0;
  // step 1: cond "xa", uncond "a"; step 2: cond "xab" -> "ab", uncond "ab".
  const auto s1 = oracle::guided_probs({0.2, 0.6, 0.2}, {0.5, 0.3, 0.2}, 2.0);
  const double expected = std::log(s1[1]) + std::log(0.8);
  CHECK(cfg_continuation_logprob(model, encode("xa"), encode("bc"), cfg) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(kind_of([&] { cfg_continuation_logprob(model, encode("xa"), TokenSeq{}, cfg); }) ==
        ErrorKind::InvalidArgs);
}

TEST_CASE("score_mc_task: single-token choices and tie-breaking") {
  TableModel model(1, byte_dist({{'a', 0.4}, {'b', 0.4}, {'c', 0.2}}));
  GuidanceConfig cfg;
  MCTask task{"tie", "q", {"b", "a", "c"}, 1};
  const auto r = score_mc_task(model, task, cfg);
  CHECK(r.choices[0].loglik == doctest::Approx(std::log(0.4)));
  CHECK(r.choices[2].loglik == doctest::Approx(std::log(0.2)));
  CHECK(r.prediction == 0);
  CHECK_FALSE(r.correct);
  CHECK(r.prediction_norm == 0);
}

TEST_CASE("byte normalization can change the prediction") {
  TableModel model(1, byte_dist({{'a', 0.6}, {'b', 0.4}}));
  GuidanceConfig cfg;
  // "b": log 0.4 = -0.92; "aa": 2 log 0.6 = -1.02 raw, -0.51 per byte.
  MCTask task{"n", "q", {"b", "aa"}, 1};
  const auto r = score_mc_task(model, task, cfg);
  CHECK(r.prediction == 0);
  CHECK(r.prediction_norm == 1);
  CHECK(r.correct_norm);
}

TEST_CASE("guidance strength can flip the prediction") {
  // Prompt "xa": cond prefers b (0.55 vs 0.45); uncond after "a" prefers b
  // more strongly, so gamma > 1 pushes toward c.
  TableModel model(2, byte_dist({{'b', 0.5}, {'c', 0.5}}),
                   {{encode("xa"), byte_dist({{'b', 0.55}, {'c', 0.45}})},
                    {encode("a"), byte_dist({{'b', 0.8}, {'c', 0.2}})}});
  MCTask task{"flip", "xa", {"b", "c"}, 1};
  GuidanceConfig g1;
  CHECK(score_mc_task(model, task, g1).prediction == 0);
  GuidanceConfig g2;
  g2.gamma = 2.0;
  CHECK(score_mc_task(model, task, g2).prediction == 1);
}

TEST_CASE("evaluate_taskset: accuracy, ordering and threads") {
  std::mt19937_64 rng(22);
  const auto model = synthetic::alphabet_table(rng, "abcd", 2);
  const auto tasks = synthetic::mc_tasks(rng, 60, "abcd");
  GuidanceConfig cfg;
  const auto serial = evaluate_taskset(model, tasks, cfg);
  const auto parallel = evaluate_taskset(model, tasks, cfg, {.threads = 4});
  REQUIRE(serial.tasks.size() == tasks.size());
  std::size_t correct = 0, correct_norm = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    CHECK(serial.tasks[i].id == tasks[i].id);
    CHECK(parallel.tasks[i].prediction == serial.tasks[i].prediction);
    CHECK(parallel.tasks[i].choices[0].loglik == serial.tasks[i].choices[0].loglik);
    CHECK(serial.tasks[i].prediction == synthetic::plain_prediction(model, tasks[i], false));
    CHECK(serial.tasks[i].prediction_norm ==
          synthetic::plain_prediction(model, tasks[i], true));
    correct += serial.tasks[i].correct;
    correct_norm += serial.tasks[i].correct_norm;
  }
  CHECK(serial.acc == doctest::Approx(static_cast<double>(correct) / 60.0));
  CHECK(serial.acc_norm == doctest::Approx(static_cast<double>(correct_norm) / 60.0));
  CHECK(serial.to_json() == parallel.to_json());
  CHECK(serial.model_name == "synthetic");
  CHECK(serial.to_json()["num_tasks"] == 60);

  const auto csv = serial.to_csv();
  CHECK(csv.rfind("id,answer,", 0) == 0);
  CHECK(csv.find("\nacc_norm,") != std::string::npos);

  CHECK(kind_of([&] { evaluate_taskset(model, {}, cfg); }) == ErrorKind::EmptyTaskSet);
}

TEST_CASE("task file parsing") {
  std::istringstream good(
      R"({"id":"a","prompt":"p","choices":["x","y"],"answer":1})"
      "\n\n"
      R"({"prompt":"q","choices":["x","y","z"],"answer":0})"
      "\n");
  const auto tasks = parse_tasks(good);
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].id == "a");
  CHECK(tasks[0].answer_index == 1);
  CHECK(tasks[1].id == "line-3");

  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_tasks(in);
    } catch (const MalformedFileError& e) {
      CHECK(e.kind() == ErrorKind::MalformedTaskFile);
      return e.line();
    }
    return 0;
  };
  const std::string ok = R"({"prompt":"p","choices":["x","y"],"answer":0})";
  CHECK(line_of(ok + "\n{not json}\n") == 2);
  CHECK(line_of(ok + "\n" + ok + "\n" + R"({"prompt":"p","choices":["x"],"answer":0})") == 3);
  CHECK(line_of(R"({"prompt":"p","choices":["x","y"],"answer":5})") == 1);
  CHECK(line_of(R"({"prompt":"p","choices":["x","y"]})") == 1);
  CHECK(line_of(R"({"prompt":"p","choices":["x",""],"answer":0})") == 1);
  CHECK(line_of("[1,2]") == 1);

  std::istringstream empty("\n\n");
  CHECK(kind_of([&] { parse_tasks(empty); }) == ErrorKind::EmptyTaskSet);
  CHECK(kind_of([] { load_tasks("/nonexistent/tasks.jsonl"); }) == ErrorKind::Io);
}

TEST_CASE("pass@k matches exhaustive enumeration") {
  for (int n = 1; n <= 8; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        CHECK(std::abs(pass_at_k(n, c, k) - oracle::pass_at_k_enumerated(n, c, k)) <= 1e-12);
        if (k > 1) CHECK(pass_at_k(n, c, k) >= pass_at_k(n, c, k - 1));
        if (c > 0) CHECK(pass_at_k(n, c, k) >= pass_at_k(n, c - 1, k));
      }
    }
  }
  CHECK(pass_at_k(5, 2, 3) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(pass_at_k(10, 0, 5) == 0.0);
  CHECK(pass_at_k(10, 10, 1) == 1.0);
  CHECK(pass_at_k(200, 13, 1) == doctest::Approx(13.0 / 200.0));
}

TEST_CASE("pass@k argument validation") {
  CHECK(kind_of([] { pass_at_k(3, 1, 4); }) == ErrorKind::InvalidArgs);
  CHECK(kind_of([] { pass_at_k(3, 4, 1); }) == ErrorKind::InvalidArgs);
  CHECK(kind_of([] { pass_at_k(3, -1, 1); }) == ErrorKind::InvalidArgs);
  CHECK(kind_of([] { pass_at_k(3, 1, 0); }) == ErrorKind::InvalidArgs);
  CHECK(kind_of([] { pass_at_k(0, 0, 1); }) == ErrorKind::InvalidArgs);
}

TEST_CASE("pass@k aggregation and input parsing") {
  std::istringstream in(
      R"({"task_id":"a","n":5,"c":2})"
      "\n"
      R"({"task_id":"b","n":5,"c":0})"
      "\n");
  const auto rows = parse_pass_at_k_inputs(in);
  REQUIRE(rows.size() == 2);
  CHECK(aggregate_pass_at_k(rows, 3) == doctest::Approx(0.45));
  CHECK(aggregate_pass_at_k(rows, 1) == doctest::Approx(0.2));
  CHECK(kind_of([] { aggregate_pass_at_k({}, 1); }) == ErrorKind::InvalidArgs);

  std::istringstream bad(R"({"task_id":"a","n":2,"c":3})");
  CHECK(kind_of([&] { parse_pass_at_k_inputs(bad); }) == ErrorKind::MalformedTaskFile);
}
