#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/decoding.hpp"
#include "cfgdecode/diagnostics.hpp"
#include "cfgdecode/scoring.hpp"
#include "cfgdecode/vocab.hpp"

namespace py = pybind11;
using namespace cfgdecode;

namespace {

GuidanceConfig make_config(double gamma, const std::string& mode,
                           std::optional<std::string> negative_prompt,
                           std::size_t split_index, std::optional<double> temperature,
                           std::optional<std::size_t> top_k, std::optional<double> top_p,
                           std::uint64_t seed) {
  GuidanceConfig cfg;
  cfg.gamma = gamma;
  cfg.mode = parse_context_mode(mode);
  if (negative_prompt) cfg.negative_prompt = encode(*negative_prompt);
  cfg.split_index = split_index;
  cfg.sampler = make_sampler_config(temperature, top_k, top_p, seed);
  return cfg;
}

py::dict step_dict(const StepRecord& r) {
  py::dict d;
  d["token"] = r.token;
  d["guided_logprob"] = r.guided_logprob;
  d["entropy_cond"] = r.entropy_cond;
  d["entropy_uncond"] = r.entropy_uncond;
  d["entropy_guided"] = r.entropy_guided;
  d["overlap_cond"] = r.overlap_cond;
  d["overlap_uncond"] = r.overlap_uncond;
  return d;
}

std::vector<double> values(const LogProbVector& v) { return {v.begin(), v.end()}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Classifier-free guidance decoding over byte-level language models";

  static py::handle error_type = py::exception<Error>(m, "Error").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error_type(e.what());
      exc.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.attr("BOS") = kBos;
  m.attr("EOS") = kEos;
  m.attr("VOCAB_SIZE") = kVocabSize;

  m.def("encode", [](const std::string& text) { return encode(text); }, py::arg("text"));
  m.def(
      "decode",
      [](const TokenSeq& tokens, bool skip_specials) {
        return py::bytes(
            decode(tokens, skip_specials ? SpecialTokens::Skip : SpecialTokens::Reject));
      },
      py::arg("tokens"), py::arg("skip_specials") = false);

  m.def("normalize", [](const std::vector<double>& logits) { return values(normalize(logits)); },
        py::arg("logits"));
  m.def(
      "guide",
      [](std::vector<double> cond, std::vector<double> uncond, double gamma) {
        return values(guide(LogProbVector::from_log_probs(std::move(cond)),
                            LogProbVector::from_log_probs(std::move(uncond)), gamma));
      },
      py::arg("cond"), py::arg("uncond"), py::arg("gamma"));
  m.def(
      "entropy",
      [](std::vector<double> logprobs) {
        return entropy(LogProbVector::from_log_probs(std::move(logprobs)));
      },
      py::arg("logprobs"));
  m.def(
      "top_p_set",
      [](std::vector<double> logprobs, double p) {
        return top_p_set(LogProbVector::from_log_probs(std::move(logprobs)), p);
      },
      py::arg("logprobs"), py::arg("p"));
  m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));

  py::class_<LanguageModel, std::shared_ptr<LanguageModel>>(m, "LanguageModel")
      .def_property_readonly("vocab_size", &LanguageModel::vocab_size)
      .def_property_readonly("name", &LanguageModel::name)
      .def_property_readonly("type", &LanguageModel::type)
      .def_property_readonly("max_context", &LanguageModel::max_context)
      .def("next_logits", &LanguageModel::next_logits, py::arg("context"))
      .def(
          "next_logprobs",
          [](const LanguageModel& self, const TokenSeq& context) {
            return values(next_logprobs(self, context));
          },
          py::arg("context"));

  py::class_<NGramModel, LanguageModel, std::shared_ptr<NGramModel>>(m, "NGramModel")
      .def_static(
          "train",
          [](const std::string& corpus, int order, double k, std::vector<double> lambdas) {
            py::gil_scoped_release nogil;
            return std::make_shared<NGramModel>(
                NGramModel::train(corpus, order, k, std::move(lambdas)));
          },
          py::arg("corpus"), py::arg("order"), py::arg("k") = NGramModel::kDefaultK,
          py::arg("lambdas") = std::vector<double>{})
      .def_static(
          "load",
          [](const std::filesystem::path& p) {
            return std::make_shared<NGramModel>(NGramModel::load(p));
          },
          py::arg("path"))
      .def_static("default_lambdas", &NGramModel::default_lambdas, py::arg("order"))
      .def("save", &NGramModel::save, py::arg("path"))
      .def_property_readonly("order", &NGramModel::order)
      .def_property_readonly("lambdas", &NGramModel::lambdas)
      .def("count", &NGramModel::count, py::arg("context"), py::arg("token"));

  py::class_<TableModel, LanguageModel, std::shared_ptr<TableModel>>(m, "TableModel")
      .def_static(
          "load",
          [](const std::filesystem::path& p) {
            return std::make_shared<TableModel>(TableModel::load(p));
          },
          py::arg("path"))
      .def_static(
          "from_json",
          [](const std::string& text) {
            return std::make_shared<TableModel>(
                TableModel::from_json(nlohmann::json::parse(text)));
          },
          py::arg("text"))
      .def("to_json", [](const TableModel& self) { return self.to_json().dump(); });

  m.def(
      "open_model",
      [](const std::string& ref) { return std::shared_ptr<LanguageModel>(open_model(ref)); },
      py::arg("reference"));

  m.def(
      "generate",
      [](std::shared_ptr<LanguageModel> model, const std::string& prompt, double gamma,
         const std::string& mode, std::optional<std::string> negative_prompt,
         std::size_t split_index, std::optional<double> temperature,
         std::optional<std::size_t> top_k, std::optional<double> top_p, std::uint64_t seed,
         std::size_t max_tokens, const std::vector<std::string>& stop) {
        const auto cfg = make_config(gamma, mode, std::move(negative_prompt), split_index,
                                     temperature, top_k, top_p, seed);
        std::vector<TokenSeq> stops;
        for (const auto& s : stop) stops.push_back(encode(s));
        GenerationTrace trace;
        {
          py::gil_scoped_release nogil;
          trace = generate(*model, encode(prompt), cfg, max_tokens, stops);
        }
        py::list steps;
        for (const auto& r : trace.steps) steps.append(step_dict(r));
        py::dict out;
        const auto tokens = trace.tokens();
        out["tokens"] = tokens;
        out["text"] = py::bytes(decode(tokens, SpecialTokens::Skip));
        out["stop_reason"] = std::string(to_string(trace.stop_reason));
        out["steps"] = steps;
        return out;
      },
      py::arg("model"), py::arg("prompt"), py::kw_only(), py::arg("gamma") = 1.0,
      py::arg("mode") = "last-token", py::arg("negative_prompt") = py::none(),
      py::arg("split_index") = 0, py::arg("temperature") = py::none(),
      py::arg("top_k") = py::none(), py::arg("top_p") = py::none(), py::arg("seed") = 0,
      py::arg("max_tokens") = 64, py::arg("stop") = std::vector<std::string>{});

  m.def(
      "continuation_logprob",
      [](std::shared_ptr<LanguageModel> model, const std::string& prompt,
         const std::string& continuation, double gamma, const std::string& mode,
         std::optional<std::string> negative_prompt) {
        const auto cfg =
            make_config(gamma, mode, std::move(negative_prompt), 0, {}, {}, {}, 0);
        py::gil_scoped_release nogil;
        return cfg_continuation_logprob(*model, encode(prompt), encode(continuation), cfg);
      },
      py::arg("model"), py::arg("prompt"), py::arg("continuation"), py::kw_only(),
      py::arg("gamma") = 1.0, py::arg("mode") = "last-token",
      py::arg("negative_prompt") = py::none());

  m.def(
      "score_tasks_jsonl",
      [](std::shared_ptr<LanguageModel> model, const std::string& jsonl, double gamma,
         const std::string& mode, std::optional<std::string> negative_prompt,
         unsigned threads) {
        const auto cfg =
            make_config(gamma, mode, std::move(negative_prompt), 0, {}, {}, {}, 0);
        std::istringstream in(jsonl);
        const auto tasks = parse_tasks(in);
        std::string out;
        {
          py::gil_scoped_release nogil;
          out = evaluate_taskset(*model, tasks, cfg, {threads}).to_json().dump();
        }
        return out;
      },
      py::arg("model"), py::arg("jsonl"), py::kw_only(), py::arg("gamma") = 1.0,
      py::arg("mode") = "last-token", py::arg("negative_prompt") = py::none(),
      py::arg("threads") = 1);
}
