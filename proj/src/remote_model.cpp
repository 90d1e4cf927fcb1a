#include <cmath>
#include <fstream>
#include <limits>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/error.hpp"
#include "httplib.h"

namespace cfgdecode {

LogProbVector next_logprobs(const LanguageModel& model,
                            std::span<const TokenId> context) {
  Logits logits = model.next_logits(context);
  if (logits.size() != model.vocab_size()) {
    throw Error(ErrorKind::BadResponse,
                model.name() + " returned " + std::to_string(logits.size()) +
                    " logits for a vocabulary of " +
                    std::to_string(model.vocab_size()));
  }
  return normalize(logits);
}

Logits parse_logits_response(std::string_view body, std::size_t vocab_size) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadResponse, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("logits") || !doc["logits"].is_array()) {
    throw Error(ErrorKind::BadResponse, "response has no \"logits\" array");
  }
  const auto& arr = doc["logits"];
  if (arr.size() != vocab_size) {
    throw Error(ErrorKind::BadResponse,
                "expected " + std::to_string(vocab_size) + " logits, got " +
                    std::to_string(arr.size()));
  }
  Logits out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_null()) {
      out.push_back(-std::numeric_limits<double>::infinity());
    } else if (v.is_number()) {
      const double x = v.get<double>();
      if (!std::isfinite(x)) {
        throw Error(ErrorKind::BadResponse, "non-finite logit");
      }
      out.push_back(x);
    } else {
      throw Error(ErrorKind::BadResponse, "logit is not a number");
    }
  }
  return out;
}

RemoteModel::RemoteModel(RemoteConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::InvalidArgs,
                "endpoint must be an http:// URL: " + config_.endpoint);
  }
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = config_.endpoint.substr(0, path_start);
  if (path_start != std::string::npos) {
    base_path_ = config_.endpoint.substr(path_start);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  }
  if (config_.vocab_size == 0) {
    throw Error(ErrorKind::InvalidArgs, "vocabulary size must be positive");
  }
  name_ = "remote:" + config_.endpoint;
}

Logits RemoteModel::next_logits(std::span<const TokenId> context) const {
  const std::string body =
      nlohmann::json{{"context", TokenSeq(context.begin(), context.end())}}.dump();
  const std::string path = base_path_ + "/logits";

  ErrorKind last_kind = ErrorKind::TransportError;
  std::string last_message;
  for (int attempt = 0; attempt <= std::max(0, config_.retries); ++attempt) {
    // A client per call keeps concurrent requests independent.
    httplib::Client client(scheme_host_port_);
    const auto sec = config_.timeout_ms / 1000;
    const auto usec = (config_.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);

    auto res = client.Post(path, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last_kind = (err == httplib::Error::ConnectionTimeout ||
                   err == httplib::Error::Read)
                      ? ErrorKind::Timeout
                      : ErrorKind::TransportError;
      last_message = httplib::to_string(err);
      continue;
    }
    if (res->status != 200) {
      last_kind = ErrorKind::TransportError;
      last_message = "HTTP status " + std::to_string(res->status);
      continue;
    }
    return parse_logits_response(res->body, config_.vocab_size);
  }
  throw Error(last_kind, config_.endpoint + ": " + last_message);
}

std::unique_ptr<LanguageModel> open_model(const std::string& reference) {
  if (reference.rfind("http://", 0) == 0 || reference.rfind("https://", 0) == 0) {
    return std::make_unique<RemoteModel>(RemoteConfig{.endpoint = reference});
  }
  std::ifstream in(reference, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open model " + reference);
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  in.close();
  if (std::string_view(magic, sizeof(magic)) == "CFGNGRAM") {
    return std::make_unique<NGramModel>(NGramModel::load(reference));
  }
  return std::make_unique<TableModel>(TableModel::load(reference));
}

}  // namespace cfgdecode
