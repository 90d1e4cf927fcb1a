#include <cmath>
#include <fstream>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/error.hpp"

namespace cfgdecode {

TableModel::Stored TableModel::make_stored(std::vector<double> probs,
                                           std::size_t vocab) {
  if (probs.size() != vocab) {
    throw Error(ErrorKind::InvalidArgs,
                "distribution has " + std::to_string(probs.size()) +
                    " entries, expected " + std::to_string(vocab));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorKind::InvalidArgs, "probabilities must be finite and >= 0");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw Error(ErrorKind::NotNormalized,
                "distribution sums to " + std::to_string(sum));
  }
  auto log_probs = LogProbVector::from_probs(probs);
  return Stored{std::move(probs), std::move(log_probs)};
}

TableModel::TableModel(std::size_t order, std::vector<double> default_probs,
                       std::vector<Entry> entries)
    : order_(order) {
  if (default_probs.empty()) {
    throw Error(ErrorKind::InvalidArgs, "default distribution is empty");
  }
  const std::size_t vocab = default_probs.size();
  auto stored = make_stored(std::move(default_probs), vocab);
  default_ = std::move(stored.probs);
  default_log_ = std::move(stored.log_probs);
  for (auto& entry : entries) {
    if (entry.context.size() > order_) {
      throw Error(ErrorKind::InvalidArgs,
                  "entry context longer than table order " +
                      std::to_string(order_));
    }
    validate_tokens(entry.context, vocab);
    entries_.insert_or_assign(std::move(entry.context),
                              make_stored(std::move(entry.probs), vocab));
  }
}

LogProbVector TableModel::next_logprobs(std::span<const TokenId> context) const {
  const std::size_t longest = std::min(order_, context.size());
  for (std::size_t len = longest + 1; len-- > 0;) {
    TokenSeq key(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
    if (auto it = entries_.find(key); it != entries_.end()) {
      return it->second.log_probs;
    }
  }
  return default_log_;
}

Logits TableModel::next_logits(std::span<const TokenId> context) const {
  auto lp = next_logprobs(context);
  return Logits(lp.begin(), lp.end());
}

TableModel TableModel::from_json(const nlohmann::json& doc) {
  try {
    std::vector<Entry> entries;
    if (doc.contains("entries")) {
      for (const auto& e : doc.at("entries")) {
        entries.push_back(Entry{e.at("context").get<TokenSeq>(),
                                e.at("probs").get<std::vector<double>>()});
      }
    }
    TableModel model(doc.at("order").get<std::size_t>(),
                     doc.at("default").get<std::vector<double>>(),
                     std::move(entries));
    if (doc.contains("name")) model.set_name(doc.at("name").get<std::string>());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("table model: ") + e.what());
  }
}

TableModel TableModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json TableModel::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [context, stored] : entries_) {
    entries.push_back({{"context", context}, {"probs", stored.probs}});
  }
  return {{"order", order_},
          {"name", name_},
          {"default", default_},
          {"entries", std::move(entries)}};
}

}  // namespace cfgdecode
