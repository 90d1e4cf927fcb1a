#include <random>

#include "cfgdecode/error.hpp"
#include "cfgdecode/vocab.hpp"
#include "doctest.h"

using namespace cfgdecode;

TEST_CASE("encode maps bytes to ids one-to-one") {
  CHECK(encode("").empty());
  CHECK(encode("ab") == TokenSeq{97, 98});
  CHECK(encode(std::string("\xff\x00", 2)) == TokenSeq{255, 0});
}

TEST_CASE("decode is the inverse on byte ids") {
  CHECK(decode(TokenSeq{104, 105}) == "hi");
  CHECK(decode(TokenSeq{}).empty());
}

TEST_CASE("decode handles special tokens per flag") {
  const TokenSeq with_eos{104, kEos, 105};
  CHECK_THROWS_AS(decode(with_eos), Error);
  try {
    decode(with_eos, SpecialTokens::Reject);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpecialTokenInOutput);
  }
  CHECK(decode(with_eos, SpecialTokens::Skip) == "hi");
  CHECK(decode(TokenSeq{kBos}, SpecialTokens::Skip).empty());
}

TEST_CASE("round trip holds for random byte strings and token sequences") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> len(0, 64);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string s(static_cast<std::size_t>(len(rng)), '\0');
    for (char& ch : s) ch = static_cast<char>(byte(rng));
    REQUIRE(decode(encode(s)) == s);

    TokenSeq ids(static_cast<std::size_t>(len(rng)));
    for (auto& id : ids) id = byte(rng);
    REQUIRE(encode(decode(ids)) == ids);
  }
}

TEST_CASE("validate_tokens rejects out-of-vocabulary ids") {
  CHECK_NOTHROW(validate_tokens(TokenSeq{0, 255, kBos, kEos}));
  CHECK_THROWS_AS(validate_tokens(TokenSeq{258}), Error);
  CHECK_THROWS_AS(validate_tokens(TokenSeq{-1}), Error);
  CHECK_THROWS_AS(validate_tokens(TokenSeq{3}, 3), Error);
}
