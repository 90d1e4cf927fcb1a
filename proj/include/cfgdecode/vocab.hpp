#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfgdecode {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by two specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr std::size_t kVocabSize = 258;

inline constexpr bool is_byte_token(TokenId id) noexcept {
  return id >= 0 && id < 256;
}

enum class SpecialTokens {
  Reject,  // throw SpecialTokenInOutput
  Skip,    // drop silently
};

// One token per byte. Never inserts BOS/EOS.
TokenSeq encode(std::string_view text);

std::string decode(std::span<const TokenId> tokens,
                   SpecialTokens specials = SpecialTokens::Reject);

// Throws InvalidArgs if any id is outside [0, vocab_size).
void validate_tokens(std::span<const TokenId> tokens,
                     std::size_t vocab_size = kVocabSize);

}  // namespace cfgdecode
