#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cfgdecode/backends.hpp"
#include "cfgdecode/error.hpp"

namespace cfgdecode {
namespace {

constexpr char kMagic[8] = {'C', 'F', 'G', 'N', 'G', 'R', 'A', 'M'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr int kBitsPerToken = 9;

std::uint64_t pack(std::span<const TokenId> tokens) {
  std::uint64_t key = 0;
  for (TokenId t : tokens) {
    key = (key << kBitsPerToken) | static_cast<std::uint64_t>(t);
  }
  return key;
}

// Little-endian writer/reader for the model file.
class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<char>(
          (static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
  }
  void put_double(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_raw(const char* data, std::size_t n) { out_.append(data, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_double() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string_view get_raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorKind::Format, "n-gram model file is truncated");
    }
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void check_lambdas(const std::vector<double>& lambdas, int order) {
  if (lambdas.size() != static_cast<std::size_t>(order)) {
    throw Error(ErrorKind::BadLambdas,
                "expected " + std::to_string(order) + " weights, got " +
                    std::to_string(lambdas.size()));
  }
  double sum = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw Error(ErrorKind::BadLambdas, "weights must be finite and >= 0");
    }
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorKind::BadLambdas,
                "weights sum to " + std::to_string(sum) + ", not 1");
  }
}

void check_order_and_k(int order, double k) {
  if (order < 1 || order > NGramModel::kMaxOrder) {
    throw Error(ErrorKind::InvalidArgs,
                "order must be in [1, " + std::to_string(NGramModel::kMaxOrder) +
                    "], got " + std::to_string(order));
  }
  if (!(k > 0.0) || !std::isfinite(k)) {
    throw Error(ErrorKind::InvalidArgs, "add-k constant must be > 0");
  }
}

}  // namespace

std::vector<double> NGramModel::default_lambdas(int order) {
  check_order_and_k(order, kDefaultK);
  std::vector<double> weights(static_cast<std::size_t>(order));
  double sum = 0.0;
  for (int i = 1; i <= order; ++i) {
    weights[i - 1] = std::ldexp(1.0, i);
    sum += weights[i - 1];
  }
  for (double& w : weights) w /= sum;
  return weights;
}

NGramModel NGramModel::train(std::string_view corpus, int order, double k,
                             std::vector<double> lambdas) {
  check_order_and_k(order, k);
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "corpus is empty");
  if (lambdas.empty()) lambdas = default_lambdas(order);
  check_lambdas(lambdas, order);

  TokenSeq seq;
  seq.reserve(corpus.size() + 1);
  seq.push_back(kBos);
  for (unsigned char ch : corpus) seq.push_back(static_cast<TokenId>(ch));

  NGramModel model;
  model.order_ = order;
  model.k_ = k;
  model.lambdas_ = std::move(lambdas);
  model.name_ = "ngram-" + std::to_string(order);
  model.tables_.resize(static_cast<std::size_t>(order));

  for (int ctx_len = 0; ctx_len < order; ++ctx_len) {
    // (context key, token) -> count, then grouped into rows.
    std::unordered_map<std::uint64_t, std::uint64_t> pair_counts;
    pair_counts.reserve(seq.size());
    for (std::size_t pos = std::max<std::size_t>(ctx_len, 1); pos < seq.size();
         ++pos) {
      const auto ctx = std::span(seq).subspan(pos - ctx_len, ctx_len);
      const std::uint64_t key =
          (pack(ctx) << kBitsPerToken) | static_cast<std::uint64_t>(seq[pos]);
      ++pair_counts[key];
    }
    Table& table = model.tables_[ctx_len];
    for (const auto& [key, count] : pair_counts) {
      Row& row = table[key >> kBitsPerToken];
      row.total += count;
      row.counts.emplace_back(
          static_cast<TokenId>(key & ((1u << kBitsPerToken) - 1)), count);
    }
    for (auto& [key, row] : table) {
      std::sort(row.counts.begin(), row.counts.end());
    }
  }
  return model;
}

const NGramModel::Row* NGramModel::find_row(
    std::span<const TokenId> context) const {
  if (context.size() >= tables_.size()) return nullptr;
  const Table& table = tables_[context.size()];
  auto it = table.find(pack(context));
  return it == table.end() ? nullptr : &it->second;
}

std::uint64_t NGramModel::count(std::span<const TokenId> context,
                                TokenId token) const {
  const Row* row = find_row(context);
  if (row == nullptr) return 0;
  auto it = std::lower_bound(
      row->counts.begin(), row->counts.end(), token,
      [](const auto& entry, TokenId t) { return entry.first < t; });
  return (it != row->counts.end() && it->first == token) ? it->second : 0;
}

std::uint64_t NGramModel::context_total(std::span<const TokenId> context) const {
  const Row* row = find_row(context);
  return row == nullptr ? 0 : row->total;
}

std::size_t NGramModel::context_count(int order) const {
  if (order < 1 || order > order_) return 0;
  return tables_[order - 1].size();
}

LogProbVector NGramModel::next_logprobs(std::span<const TokenId> context) const {
  validate_tokens(context);
  // Last (order - 1) tokens of BOS + context.
  const std::size_t want = static_cast<std::size_t>(order_ - 1);
  TokenSeq history;
  if (context.size() >= want) {
    history.assign(context.end() - want, context.end());
  } else {
    history.push_back(kBos);
    history.insert(history.end(), context.begin(), context.end());
  }

  const double vocab = static_cast<double>(kVocabSize);
  std::vector<double> probs(kVocabSize, 0.0);
  double weight_sum = 0.0;
  for (int ctx_len = 0; ctx_len < order_; ++ctx_len) {
    if (static_cast<std::size_t>(ctx_len) <= history.size()) {
      weight_sum += lambdas_[ctx_len];
    }
  }
  if (weight_sum <= 0.0) {
    // Every available order has zero weight; fall back to uniform.
    std::vector<double> uniform(kVocabSize, 0.0);
    return normalize(uniform);
  }

  for (int ctx_len = 0; ctx_len < order_; ++ctx_len) {
    if (static_cast<std::size_t>(ctx_len) > history.size()) continue;
    const double weight = lambdas_[ctx_len] / weight_sum;
    if (weight == 0.0) continue;
    const auto ctx = std::span<const TokenId>(history).last(ctx_len);
    const Row* row = find_row(ctx);
    const double total = row == nullptr ? 0.0 : static_cast<double>(row->total);
    const double denom = total + k_ * vocab;
    const double base = weight * k_ / denom;
    for (double& p : probs) p += base;
    if (row != nullptr) {
      for (const auto& [token, c] : row->counts) {
        probs[token] += weight * static_cast<double>(c) / denom;
      }
    }
  }

  std::vector<double> logs(kVocabSize);
  for (std::size_t i = 0; i < kVocabSize; ++i) logs[i] = std::log(probs[i]);
  return normalize(logs);
}

Logits NGramModel::next_logits(std::span<const TokenId> context) const {
  auto lp = next_logprobs(context);
  return Logits(lp.begin(), lp.end());
}

// Layout (all integers little-endian):
//   "CFGNGRAM" u32 version u32 order f64 k f64 lambda[order] u32 vocab
//   per context length 0..order-1:
//     u64 rows, then rows by ascending packed key:
//       u64 key u64 total u32 n, then n x (u16 token, u64 count)
std::string NGramModel::serialize() const {
  ByteWriter w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(order_));
  w.put_double(k_);
  for (double l : lambdas_) w.put_double(l);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kVocabSize));
  for (const Table& table : tables_) {
    std::vector<std::uint64_t> keys;
    keys.reserve(table.size());
    for (const auto& [key, row] : table) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    w.put<std::uint64_t>(keys.size());
    for (std::uint64_t key : keys) {
      const Row& row = table.at(key);
      w.put<std::uint64_t>(key);
      w.put<std::uint64_t>(row.total);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(row.counts.size()));
      for (const auto& [token, c] : row.counts) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(token));
        w.put<std::uint64_t>(c);
      }
    }
  }
  return w.take();
}

NGramModel NGramModel::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw Error(ErrorKind::Format, "not an n-gram model file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw Error(ErrorKind::Format,
                "unsupported n-gram format version " + std::to_string(version));
  }
  NGramModel model;
  model.order_ = static_cast<int>(r.get<std::uint32_t>());
  model.k_ = r.get_double();
  check_order_and_k(model.order_, model.k_);
  for (int i = 0; i < model.order_; ++i) model.lambdas_.push_back(r.get_double());
  check_lambdas(model.lambdas_, model.order_);
  if (r.get<std::uint32_t>() != kVocabSize) {
    throw Error(ErrorKind::Format, "vocabulary size mismatch");
  }
  model.name_ = "ngram-" + std::to_string(model.order_);
  model.tables_.resize(static_cast<std::size_t>(model.order_));
  for (Table& table : model.tables_) {
    const auto rows = r.get<std::uint64_t>();
    table.reserve(rows);
    for (std::uint64_t i = 0; i < rows; ++i) {
      const auto key = r.get<std::uint64_t>();
      Row row;
      row.total = r.get<std::uint64_t>();
      const auto n = r.get<std::uint32_t>();
      row.counts.reserve(n);
      std::uint64_t sum = 0;
      for (std::uint32_t j = 0; j < n; ++j) {
        const auto token = static_cast<TokenId>(r.get<std::uint16_t>());
        const auto c = r.get<std::uint64_t>();
        if (static_cast<std::size_t>(token) >= kVocabSize) {
          throw Error(ErrorKind::Format, "token id out of range");
        }
        row.counts.emplace_back(token, c);
        sum += c;
      }
      if (sum != row.total) {
        throw Error(ErrorKind::Format, "row total does not match its counts");
      }
      table.emplace(key, std::move(row));
    }
  }
  if (!r.done()) throw Error(ErrorKind::Format, "trailing bytes in model file");
  return model;
}

void NGramModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace cfgdecode
