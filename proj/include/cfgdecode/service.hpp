#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/decoding.hpp"
#include "cfgdecode/scoring.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace cfgdecode {

// Default assistant system prompt; the natural negative prompt when steering
// an assistant away from its stock behaviour.
inline constexpr std::string_view kDefaultSystemPrompt =
    "The prompt below is a question to answer, a task to complete, or a "
    "conversation to respond to; decide which and write an appropriate "
    "response.";

// ---------------------------------------------------------------------------
// Model registry

struct ModelSpec {
  std::string name;
  std::string type;      // "ngram" | "table" | "remote"
  std::string path;      // ngram / table
  std::string endpoint;  // remote
  int timeout_ms = 10000;
  int retries = 2;
  std::size_t vocab_size = kVocabSize;
};

// Named, immutable backends shared by every request.
class ModelRegistry {
 public:
  // {"models": [{"name", "type", "path" | "endpoint", ...}]}; relative paths
  // resolve against base_dir.
  static ModelRegistry from_config(const nlohmann::json& doc,
                                   const std::filesystem::path& base_dir = {});
  static ModelRegistry load(const std::filesystem::path& config_path);

  void add(ModelSpec spec, std::shared_ptr<const LanguageModel> model);
  // Opens the backend described by spec (path relative to base_dir).
  void add(ModelSpec spec, const std::filesystem::path& base_dir = {});

  // nullptr when absent. An empty name selects the first registered model.
  std::shared_ptr<const LanguageModel> find(std::string_view name) const;

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }

  nlohmann::json to_config() const;
  nlohmann::json listing() const;

 private:
  struct Entry {
    ModelSpec spec;
    std::shared_ptr<const LanguageModel> model;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Chat generation

enum class Role { User, Assistant };

struct ChatMessage {
  Role role = Role::User;
  std::string text;
};

// "SYSTEM:\n{system}\n\n", then "USER:\n..\n\n" / "ASSISTANT:\n..\n\n" turns,
// then "ASSISTANT:\n".
std::string render_chat(std::string_view system,
                        const std::vector<ChatMessage>& messages);

struct GenerateRequest {
  std::string model;  // empty: first registered model
  std::string system_prompt;
  std::optional<std::string> negative_system_prompt;
  std::vector<ChatMessage> messages;
  double gamma = 1.0;
  SamplerConfig sampler;
  std::size_t max_tokens = 128;
  std::vector<std::string> stop;

  // Throws InvalidArgs on missing or mistyped fields.
  static GenerateRequest from_json(const nlohmann::json& doc);
  // Roles must alternate starting and ending with the user.
  void validate(std::size_t max_tokens_limit = 4096) const;
};

// The guidance setup a request maps to: conditional prompt is the rendered
// chat; with a negative system prompt the unconditional context is the chat
// rendered with that system prompt, otherwise the last prompt token.
struct PreparedGeneration {
  TokenSeq prompt;
  GuidanceConfig config;
  std::vector<TokenSeq> stop_sequences;
};
PreparedGeneration prepare_generation(const GenerateRequest& req);

struct StreamEvent {
  std::string text;
  TokenId token = -1;
  double logprob = 0.0;
  double entropy_cond = 0.0;
  double entropy_uncond = 0.0;
  double entropy_guided = 0.0;
  std::size_t overlap_cond = 0;
  std::size_t overlap_uncond = 0;
  bool done = false;
  std::optional<StopReason> stop_reason;  // set on the done event
  std::string error;                      // set when stop_reason == Error

  nlohmann::json to_json() const;
};

// Turns a byte stream into complete UTF-8 text chunks. Invalid sequences
// become U+FFFD. For valid input the chunks concatenate to the input.
class Utf8Accumulator {
 public:
  std::string push(unsigned char byte);
  std::string flush();

 private:
  std::string pending_;
  std::size_t expected_ = 0;
};

// One decoding session per request. Produces token events and exactly one
// final done event.
class GenerateSession {
 public:
  GenerateSession(std::shared_ptr<const LanguageModel> model,
                  const GenerateRequest& req);

  // nullopt after the done event has been returned. Backend errors on the
  // first step propagate; later ones become an error done event.
  std::optional<StreamEvent> next();
  const GenerationTrace& trace() const { return decoder_.trace(); }

 private:
  std::shared_ptr<const LanguageModel> model_;
  PreparedGeneration prepared_;
  GuidedDecoder decoder_;
  Utf8Accumulator utf8_;
  bool finished_ = false;
};

// Validates, then calls sink for every event in order. Returns false if the
// sink asked to stop. Throws InvalidArgs for an unknown model.
bool handle_generate(const ModelRegistry& registry, const GenerateRequest& req,
                     const std::function<bool(const StreamEvent&)>& sink);

// ---------------------------------------------------------------------------
// Scoring and listing

struct ScoreRequest {
  std::string model;
  GuidanceConfig config;
  unsigned threads = 1;

  // Keys: model, gamma, mode, split, negative_prompt, threads.
  static ScoreRequest from_params(const std::multimap<std::string, std::string>& params);
};

ScoreReport handle_score(const ModelRegistry& registry, std::string_view task_file,
                         const ScoreRequest& req);

// Canonical serialized report shared by the CLI and the service.
std::string render_score_report(const ScoreReport& report);

nlohmann::json handle_models(const ModelRegistry& registry);

// HTTP status for a library error.
int http_status_for(ErrorKind kind);

// ---------------------------------------------------------------------------
// HTTP server

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  unsigned max_concurrency = 8;
  std::size_t max_body_bytes = 8u << 20;
  std::size_t max_tokens_limit = 4096;
};

class Server {
 public:
  Server(ModelRegistry registry, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Throws Error(Io) when the port cannot be bound. Returns the bound port.
  int bind();
  // Blocks until stop().
  void serve();
  void stop();
  bool running() const;

 private:
  void install_routes();

  ModelRegistry registry_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace cfgdecode
