#include "cfgdecode/vocab.hpp"

#include "cfgdecode/error.hpp"

namespace cfgdecode {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgs: return "InvalidArgs";
    case ErrorKind::SpecialTokenInOutput: return "SpecialTokenInOutput";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::BadLambdas: return "BadLambdas";
    case ErrorKind::AllNegInfinity: return "AllNegInfinity";
    case ErrorKind::EmptyPrompt: return "EmptyPrompt";
    case ErrorKind::MissingNegativePrompt: return "MissingNegativePrompt";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::EmptyTrace: return "EmptyTrace";
    case ErrorKind::MalformedTaskFile: return "MalformedTaskFile";
    case ErrorKind::EmptyTaskSet: return "EmptyTaskSet";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::BadResponse: return "BadResponse";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
  }
  return "Unknown";
}

TokenSeq encode(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char ch : text) out.push_back(static_cast<TokenId>(ch));
  return out;
}

std::string decode(std::span<const TokenId> tokens, SpecialTokens specials) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) {
    if (is_byte_token(id)) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (specials == SpecialTokens::Reject) {
      throw Error(ErrorKind::SpecialTokenInOutput,
                  "token id " + std::to_string(id) + " is not a byte");
    }
  }
  return out;
}

void validate_tokens(std::span<const TokenId> tokens, std::size_t vocab_size) {
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error(ErrorKind::InvalidArgs,
                  "token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(vocab_size));
    }
  }
}

}  // namespace cfgdecode
