#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cfgdecode/logprob.hpp"
#include "cfgdecode/vocab.hpp"
#include "json.hpp"

namespace cfgdecode {

// A source of next-token scores. Implementations must be safe to call
// concurrently from several decoding sessions.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  // One score per vocabulary entry for the token following `context`.
  virtual Logits next_logits(std::span<const TokenId> context) const = 0;

  virtual std::size_t vocab_size() const = 0;
  virtual std::string name() const = 0;
  virtual std::string type() const = 0;
  // Longest context the backend looks at; 0 means unbounded.
  virtual std::size_t max_context() const = 0;
};

// normalize(model.next_logits(context)) with the vocabulary size checked.
LogProbVector next_logprobs(const LanguageModel& model,
                            std::span<const TokenId> context);

// ---------------------------------------------------------------------------
// N-gram model

// Interpolated n-gram over the byte vocabulary. Every order i in [1, order]
// keeps counts of (i-1)-token context -> next token, estimated with add-k
// smoothing and mixed with fixed weights lambda_i:
//
//   p(w | h) = sum_i lambda_i * (count_i(h_i, w) + k) / (total_i(h_i) + k V)
//
// Training text is prefixed with BOS, and so is every query context, which
// lets short prompts use the start-of-text statistics. Orders whose context
// is longer than the (BOS-prefixed) query are dropped and the remaining
// weights renormalized.
class NGramModel final : public LanguageModel {
 public:
  static constexpr int kMaxOrder = 7;
  static constexpr double kDefaultK = 0.01;

  // Weights proportional to 2^i for order i, normalized.
  static std::vector<double> default_lambdas(int order);

  // Throws EmptyCorpus, BadLambdas, InvalidArgs (order or k out of range).
  static NGramModel train(std::string_view corpus, int order,
                          double k = kDefaultK,
                          std::vector<double> lambdas = {});

  static NGramModel load(const std::filesystem::path& path);
  static NGramModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  LogProbVector next_logprobs(std::span<const TokenId> context) const;

  Logits next_logits(std::span<const TokenId> context) const override;
  std::size_t vocab_size() const override { return kVocabSize; }
  std::string name() const override { return name_; }
  std::string type() const override { return "ngram"; }
  std::size_t max_context() const override {
    return static_cast<std::size_t>(order_ - 1);
  }

  void set_name(std::string name) { name_ = std::move(name); }

  int order() const noexcept { return order_; }
  double k() const noexcept { return k_; }
  const std::vector<double>& lambdas() const noexcept { return lambdas_; }

  // Raw counts; the context length selects the order (length + 1).
  std::uint64_t count(std::span<const TokenId> context, TokenId token) const;
  std::uint64_t context_total(std::span<const TokenId> context) const;
  std::size_t context_count(int order) const;

  friend bool operator==(const NGramModel& a, const NGramModel& b) {
    return a.serialize() == b.serialize();
  }

 private:
  struct Row {
    std::uint64_t total = 0;
    std::vector<std::pair<TokenId, std::uint64_t>> counts;  // sorted by token
  };
  using Table = std::unordered_map<std::uint64_t, Row>;

  NGramModel() = default;
  const Row* find_row(std::span<const TokenId> context) const;

  int order_ = 1;
  double k_ = kDefaultK;
  std::vector<double> lambdas_;
  std::vector<Table> tables_;  // tables_[i] holds contexts of length i
  std::string name_ = "ngram";
};

// ---------------------------------------------------------------------------
// Table model

// Explicit conditional distributions keyed by exact context suffix. The
// longest stored suffix of the query wins; unmatched contexts fall back to
// the default distribution. Used as an exact oracle.
class TableModel final : public LanguageModel {
 public:
  struct Entry {
    TokenSeq context;
    std::vector<double> probs;
  };

  // Every vector must be a distribution over the same vocabulary
  // (nonnegative, summing to 1 within 1e-12); contexts at most `order` long.
  TableModel(std::size_t order, std::vector<double> default_probs,
             std::vector<Entry> entries = {});

  static TableModel from_json(const nlohmann::json& doc);
  static TableModel load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  LogProbVector next_logprobs(std::span<const TokenId> context) const;

  Logits next_logits(std::span<const TokenId> context) const override;
  std::size_t vocab_size() const override { return default_.size(); }
  std::string name() const override { return name_; }
  std::string type() const override { return "table"; }
  std::size_t max_context() const override { return order_; }

  void set_name(std::string name) { name_ = std::move(name); }
  std::size_t order() const noexcept { return order_; }

 private:
  struct Stored {
    std::vector<double> probs;
    LogProbVector log_probs;
  };
  static Stored make_stored(std::vector<double> probs, std::size_t vocab);

  std::size_t order_;
  std::vector<double> default_;
  LogProbVector default_log_;
  std::map<TokenSeq, Stored> entries_;
  std::string name_ = "table";
};

// ---------------------------------------------------------------------------
// Remote model

struct RemoteConfig {
  // Base URL, e.g. "http://127.0.0.1:8000" or "http://host/prefix".
  std::string endpoint;
  int timeout_ms = 10000;
  int retries = 2;
  // The endpoint's vocabulary size; responses of any other length are
  // rejected.
  std::size_t vocab_size = kVocabSize;
};

// Client for the logits wire protocol: POST <endpoint>/logits with
// {"context":[...]} answered by {"logits":[...]}. A JSON null entry stands
// for -infinity. One request per call; nothing is cached.
class RemoteModel final : public LanguageModel {
 public:
  explicit RemoteModel(RemoteConfig config);

  // Throws Timeout, TransportError (after retries) or BadResponse.
  Logits next_logits(std::span<const TokenId> context) const override;
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::string name() const override { return name_; }
  std::string type() const override { return "remote"; }
  std::size_t max_context() const override { return 0; }

  void set_name(std::string name) { name_ = std::move(name); }
  const RemoteConfig& config() const noexcept { return config_; }

 private:
  RemoteConfig config_;
  std::string scheme_host_port_;
  std::string base_path_;
  std::string name_ = "remote";
};

// Parses a /logits response body. Exposed for tests.
Logits parse_logits_response(std::string_view body, std::size_t vocab_size);

// Opens a model from a CLI-style reference: an http:// URL (remote), an
// n-gram binary (by magic) or a table JSON document.
std::unique_ptr<LanguageModel> open_model(const std::string& reference);

}  // namespace cfgdecode
