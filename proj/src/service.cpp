#include "cfgdecode/service.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "httplib.h"

namespace cfgdecode {
namespace {

using nlohmann::json;

constexpr std::string_view kReplacementChar = "\xEF\xBF\xBD";

std::string_view role_name(Role role) {
  return role == Role::User ? "user" : "assistant";
}

template <class T>
T field_or(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key) || doc.at(key).is_null()) return fallback;
  return doc.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Registry

void ModelRegistry::add(ModelSpec spec, std::shared_ptr<const LanguageModel> model) {
  if (spec.name.empty()) throw Error(ErrorKind::InvalidArgs, "model needs a name");
  if (std::any_of(entries_.begin(), entries_.end(),
                  [&](const Entry& e) { return e.spec.name == spec.name; })) {
    throw Error(ErrorKind::InvalidArgs, "duplicate model name '" + spec.name + "'");
  }
  if (spec.type.empty()) spec.type = model->type();
  spec.vocab_size = model->vocab_size();
  entries_.push_back(Entry{std::move(spec), std::move(model)});
}

void ModelRegistry::add(ModelSpec spec, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  std::shared_ptr<LanguageModel> model;
  if (spec.type == "ngram") {
    auto m = std::make_shared<NGramModel>(NGramModel::load(resolve(spec.path)));
    m->set_name(spec.name);
    model = m;
  } else if (spec.type == "table") {
    auto m = std::make_shared<TableModel>(TableModel::load(resolve(spec.path)));
    m->set_name(spec.name);
    model = m;
  } else if (spec.type == "remote") {
    auto m = std::make_shared<RemoteModel>(RemoteConfig{
        spec.endpoint, spec.timeout_ms, spec.retries, spec.vocab_size});
    m->set_name(spec.name);
    model = m;
  } else {
    throw Error(ErrorKind::InvalidArgs, "unknown model type '" + spec.type + "'");
  }
  add(std::move(spec), std::shared_ptr<const LanguageModel>(std::move(model)));
}

ModelRegistry ModelRegistry::from_config(const json& doc,
                                         const std::filesystem::path& base_dir) {
  ModelRegistry registry;
  try {
    for (const auto& m : doc.at("models")) {
      ModelSpec spec;
      spec.name = m.at("name").get<std::string>();
      spec.type = m.at("type").get<std::string>();
      spec.path = field_or<std::string>(m, "path", "");
      spec.endpoint = field_or<std::string>(m, "endpoint", "");
      spec.timeout_ms = field_or<int>(m, "timeout_ms", spec.timeout_ms);
      spec.retries = field_or<int>(m, "retries", spec.retries);
      spec.vocab_size = field_or<std::size_t>(m, "vocab_size", spec.vocab_size);
      registry.add(std::move(spec), base_dir);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("model registry config: ") + e.what());
  }
  return registry;
}

ModelRegistry ModelRegistry::load(const std::filesystem::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + config_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, config_path.string() + ": " + e.what());
  }
  return from_config(doc, config_path.parent_path());
}

std::shared_ptr<const LanguageModel> ModelRegistry::find(std::string_view name) const {
  if (name.empty()) return entries_.empty() ? nullptr : entries_.front().model;
  for (const auto& e : entries_) {
    if (e.spec.name == name) return e.model;
  }
  return nullptr;
}

json ModelRegistry::to_config() const {
  json models = json::array();
  for (const auto& e : entries_) {
    json m = {{"name", e.spec.name}, {"type", e.spec.type}};
    if (e.spec.type == "remote") {
      m["endpoint"] = e.spec.endpoint;
      m["timeout_ms"] = e.spec.timeout_ms;
      m["retries"] = e.spec.retries;
      m["vocab_size"] = e.spec.vocab_size;
    } else {
      m["path"] = e.spec.path;
    }
    models.push_back(std::move(m));
  }
  return {{"models", std::move(models)}};
}

json ModelRegistry::listing() const {
  json out = json::array();
  for (const auto& e : entries_) {
    out.push_back({{"name", e.spec.name},
                   {"type", e.model->type()},
                   {"vocab_size", e.model->vocab_size()},
                   {"max_context", e.model->max_context()}});
  }
  return out;
}

json handle_models(const ModelRegistry& registry) {
  return {{"models", registry.listing()},
          {"default_system_prompt", std::string(kDefaultSystemPrompt)}};
}

// ---------------------------------------------------------------------------
// Requests

std::string render_chat(std::string_view system,
                        const std::vector<ChatMessage>& messages) {
  std::string out = "SYSTEM:\n";
  out.append(system);
  out += "\n\n";
  for (const auto& m : messages) {
    out += m.role == Role::User ? "USER:\n" : "ASSISTANT:\n";
    out += m.text;
    out += "\n\n";
  }
  out += "ASSISTANT:\n";
  return out;
}

GenerateRequest GenerateRequest::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::InvalidArgs, "request must be an object");
  GenerateRequest req;
  try {
    req.model = field_or<std::string>(doc, "model", "");
    req.system_prompt = field_or<std::string>(doc, "system_prompt", "");
    if (doc.contains("negative_system_prompt") &&
        !doc.at("negative_system_prompt").is_null()) {
      req.negative_system_prompt = doc.at("negative_system_prompt").get<std::string>();
    }
    for (const auto& m : doc.at("messages")) {
      const auto role = m.at("role").get<std::string>();
      if (role != "user" && role != "assistant") {
        throw Error(ErrorKind::InvalidArgs, "unknown role '" + role + "'");
      }
      req.messages.push_back(ChatMessage{role == "user" ? Role::User : Role::Assistant,
                                         m.at("text").get<std::string>()});
    }
    req.gamma = field_or<double>(doc, "gamma", 1.0);
    std::optional<double> temperature;
    std::optional<std::size_t> top_k;
    std::optional<double> top_p;
    if (doc.contains("temperature") && !doc["temperature"].is_null())
      temperature = doc["temperature"].get<double>();
    if (doc.contains("top_k") && !doc["top_k"].is_null())
      top_k = doc["top_k"].get<std::size_t>();
    if (doc.contains("top_p") && !doc["top_p"].is_null())
      top_p = doc["top_p"].get<double>();
    req.sampler = make_sampler_config(temperature, top_k, top_p,
                                      field_or<std::uint64_t>(doc, "seed", 0));
    req.max_tokens = field_or<std::size_t>(doc, "max_tokens", 128);
    req.stop = field_or<std::vector<std::string>>(doc, "stop", {});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgs, e.what());
  }
  return req;
}

void GenerateRequest::validate(std::size_t max_tokens_limit) const {
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw Error(ErrorKind::InvalidArgs, "gamma must be finite and >= 0");
  }
  if (messages.empty()) throw Error(ErrorKind::InvalidArgs, "messages are empty");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::User : Role::Assistant;
    if (messages[i].role != expected) {
      throw Error(ErrorKind::InvalidArgs,
                  "message " + std::to_string(i) + " should be from the " +
                      std::string(role_name(expected)));
    }
  }
  if (messages.back().role != Role::User) {
    throw Error(ErrorKind::InvalidArgs, "the last message must be from the user");
  }
  if (max_tokens < 1 || max_tokens > max_tokens_limit) {
    throw Error(ErrorKind::InvalidArgs,
                "max_tokens must be in [1, " + std::to_string(max_tokens_limit) + "]");
  }
  cfgdecode::validate(sampler);
}

PreparedGeneration prepare_generation(const GenerateRequest& req) {
  PreparedGeneration out;
  out.prompt = encode(render_chat(req.system_prompt, req.messages));
  out.config.gamma = req.gamma;
  out.config.sampler = req.sampler;
  if (req.negative_system_prompt) {
    // Both renderings end in the same "ASSISTANT:\n" suffix, so dropping the
    // final token here makes the unconditional context the full negative
    // rendering once init_dual_context re-appends the prompt's last token.
    TokenSeq negative = encode(render_chat(*req.negative_system_prompt, req.messages));
    negative.pop_back();
    out.config.mode = ContextMode::NegativePrompt;
    out.config.negative_prompt = std::move(negative);
  }
  for (const auto& s : req.stop) {
    if (!s.empty()) out.stop_sequences.push_back(encode(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Streaming

json StreamEvent::to_json() const {
  if (done) {
    json doc = {{"done", true},
                {"text", text},
                {"stop_reason", std::string(to_string(stop_reason.value_or(
                                    StopReason::MaxTokens)))}};
    if (!error.empty()) doc["error"] = error;
    return doc;
  }
  return {{"done", false},
          {"token", token},
          {"text", text},
          {"logprob", logprob},
          {"entropy", {{"cond", entropy_cond},
                       {"uncond", entropy_uncond},
                       {"guided", entropy_guided}}},
          {"overlap", {{"cond", overlap_cond}, {"uncond", overlap_uncond}}}};
}

std::string Utf8Accumulator::push(unsigned char byte) {
  std::string out;
  if (!pending_.empty()) {
    const auto lead = static_cast<unsigned char>(pending_[0]);
    bool ok = (byte & 0xC0) == 0x80;
    if (ok && pending_.size() == 1) {
      // Second-byte ranges exclude overlong forms and surrogates.
      if (lead == 0xE0) ok = byte >= 0xA0;
      else if (lead == 0xED) ok = byte <= 0x9F;
      else if (lead == 0xF0) ok = byte >= 0x90;
      else if (lead == 0xF4) ok = byte <= 0x8F;
    }
    if (ok) {
      pending_.push_back(static_cast<char>(byte));
      if (pending_.size() == expected_) {
        out = std::move(pending_);
        pending_.clear();
      }
      return out;
    }
    out.append(kReplacementChar);
    pending_.clear();
  }
  if (byte < 0x80) {
    out.push_back(static_cast<char>(byte));
  } else if (byte >= 0xC2 && byte <= 0xF4) {
    expected_ = byte < 0xE0 ? 2 : byte < 0xF0 ? 3 : 4;
    pending_.push_back(static_cast<char>(byte));
  } else {
    out.append(kReplacementChar);
  }
  return out;
}

std::string Utf8Accumulator::flush() {
  if (pending_.empty()) return {};
  pending_.clear();
  return std::string(kReplacementChar);
}

GenerateSession::GenerateSession(std::shared_ptr<const LanguageModel> model,
                                 const GenerateRequest& req)
    : model_(std::move(model)),
      prepared_(prepare_generation(req)),
      decoder_(*model_, prepared_.prompt, prepared_.config, req.max_tokens,
               prepared_.stop_sequences) {}

std::optional<StreamEvent> GenerateSession::next() {
  if (finished_) return std::nullopt;
  if (!decoder_.finished()) {
    const bool first = decoder_.trace().steps.empty();
    try {
      auto rec = decoder_.next();
      if (rec) {
        StreamEvent ev;
        ev.token = rec->token;
        if (is_byte_token(rec->token)) {
          ev.text = utf8_.push(static_cast<unsigned char>(rec->token));
        }
        ev.logprob = rec->guided_logprob;
        ev.entropy_cond = rec->entropy_cond;
        ev.entropy_uncond = rec->entropy_uncond;
        ev.entropy_guided = rec->entropy_guided;
        ev.overlap_cond = rec->overlap_cond;
        ev.overlap_uncond = rec->overlap_uncond;
        return ev;
      }
    } catch (const Error& e) {
      if (first) throw;
      finished_ = true;
      StreamEvent ev;
      ev.done = true;
      ev.text = utf8_.flush();
      ev.stop_reason = StopReason::Error;
      ev.error = e.what();
      return ev;
    }
  }
  finished_ = true;
  StreamEvent ev;
  ev.done = true;
  ev.text = utf8_.flush();
  ev.stop_reason = decoder_.trace().stop_reason;
  return ev;
}

bool handle_generate(const ModelRegistry& registry, const GenerateRequest& req,
                     const std::function<bool(const StreamEvent&)>& sink) {
  req.validate();
  auto model = registry.find(req.model);
  if (!model) throw Error(ErrorKind::InvalidArgs, "unknown model '" + req.model + "'");
  GenerateSession session(std::move(model), req);
  while (auto ev = session.next()) {
    if (!sink(*ev)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Scoring

ScoreRequest ScoreRequest::from_params(
    const std::multimap<std::string, std::string>& params) {
  ScoreRequest req;
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = params.find(key);
    if (it == params.end()) return std::nullopt;
    return it->second;
  };
  try {
    if (auto v = get("model")) req.model = *v;
    if (auto v = get("gamma")) req.config.gamma = std::stod(*v);
    if (auto v = get("mode")) req.config.mode = parse_context_mode(*v);
    if (auto v = get("split")) req.config.split_index = std::stoul(*v);
    if (auto v = get("negative_prompt")) req.config.negative_prompt = encode(*v);
    if (auto v = get("threads")) req.threads = static_cast<unsigned>(std::stoul(*v));
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::InvalidArgs, std::string("bad score parameter: ") + e.what());
  }
  return req;
}

ScoreReport handle_score(const ModelRegistry& registry, std::string_view task_file,
                         const ScoreRequest& req) {
  auto model = registry.find(req.model);
  if (!model) throw Error(ErrorKind::InvalidArgs, "unknown model '" + req.model + "'");
  std::istringstream in{std::string(task_file)};
  const auto tasks = parse_tasks(in);
  return evaluate_taskset(*model, tasks, req.config, EvalOptions{req.threads});
}

std::string render_score_report(const ScoreReport& report) {
  return report.to_json().dump(2) + "\n";
}

int http_status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Timeout:
    case ErrorKind::BadResponse:
    case ErrorKind::TransportError:
      return 502;
    case ErrorKind::Io:
      return 500;
    default:
      return 400;
  }
}

// ---------------------------------------------------------------------------
// HTTP server

Server::Server(ModelRegistry registry, ServerOptions options)
    : registry_(std::move(registry)),
      options_(std::move(options)),
      http_(std::make_unique<httplib::Server>()) {
  const unsigned workers = std::max(1u, options_.max_concurrency);
  http_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  // httplib's defaults add SO_REUSEPORT, which would let a second server
  // share a busy port instead of failing to bind.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes),
               sizeof(yes));
  });
  http_->set_payload_max_length(options_.max_body_bytes);
  http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  install_routes();
}

Server::~Server() { stop(); }

void Server::install_routes() {
  auto send_error = [](httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  };

  http_->Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  http_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  http_->Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(handle_models(registry_).dump(), "application/json");
  });

  http_->Post("/v1/score", [this, send_error](const httplib::Request& req,
                                             httplib::Response& res) {
    if (req.body.size() > options_.max_body_bytes) {
      send_error(res, 413, "task file too large");
      return;
    }
    try {
      const auto score_req = ScoreRequest::from_params(req.params);
      const auto report = handle_score(registry_, req.body, score_req);
      res.set_content(render_score_report(report), "application/json");
    } catch (const Error& e) {
      send_error(res, http_status_for(e.kind()), e.what());
    }
  });

  http_->Post("/v1/generate", [this, send_error](const httplib::Request& req,
                                                httplib::Response& res) {
    std::shared_ptr<GenerateSession> session;
    std::optional<StreamEvent> first;
    try {
      json doc;
      try {
        doc = json::parse(req.body);
      } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidArgs, std::string("invalid JSON: ") + e.what());
      }
      auto gen = GenerateRequest::from_json(doc);
      gen.validate(options_.max_tokens_limit);
      auto model = registry_.find(gen.model);
      if (!model) throw Error(ErrorKind::InvalidArgs, "unknown model '" + gen.model + "'");
      session = std::make_shared<GenerateSession>(std::move(model), gen);
      // The first step runs before any bytes are sent so that an immediate
      // backend failure can still be reported as a status code.
      first = session->next();
    } catch (const Error& e) {
      send_error(res, http_status_for(e.kind()), e.what());
      return;
    }
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [session, pending = std::move(first)](std::size_t,
                                              httplib::DataSink& sink) mutable {
          auto ev = pending ? std::exchange(pending, std::nullopt) : session->next();
          if (!ev) {
            sink.done();
            return true;
          }
          const std::string line = ev->to_json().dump() + "\n";
          if (!sink.write(line.data(), line.size())) return false;
          if (ev->done) sink.done();
          return true;
        });
  });
}

int Server::bind() {
  if (options_.port == 0) {
    const int port = http_->bind_to_any_port(options_.host);
    if (port < 0) throw Error(ErrorKind::Io, "cannot bind " + options_.host);
    options_.port = port;
    return port;
  }
  if (!http_->bind_to_port(options_.host, options_.port)) {
    throw Error(ErrorKind::Io, "cannot bind " + options_.host + ":" +
                                   std::to_string(options_.port));
  }
  return options_.port;
}

void Server::serve() { http_->listen_after_bind(); }

void Server::stop() {
  if (http_) http_->stop();
}

bool Server::running() const { return http_->is_running(); }

}  // namespace cfgdecode
