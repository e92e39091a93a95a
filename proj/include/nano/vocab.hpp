#pragma once

#include "nano/autograd.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nano {

class UnknownTokenError : public std::invalid_argument {
 public:
  explicit UnknownTokenError(const std::string& word) : std::invalid_argument("unknown token: " + word), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

// Token ids plus the number of leading ids that belong to the prompt.
struct Sequence {
  std::vector<TokenId> ids;
  std::size_t prompt_len = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t completion_len() const { return ids.size() - prompt_len; }
  bool operator==(const Sequence&) const = default;
};

// Closed word-level vocabulary. Ids are dense; <pad>, <bos>, <eos> occupy 0..2.
class Vocab {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";

  Vocab() = default;
  // Specials are prepended; duplicates and empty words are rejected.
  explicit Vocab(std::vector<std::string> words);

  // Sorted word set of the corpus plus specials.
  static Vocab from_corpus(std::span<const std::string> lines);

  std::size_t size() const { return tokens_.size(); }
  TokenId pad() const { return 0; }
  TokenId bos() const { return 1; }
  TokenId eos() const { return 2; }

  std::optional<TokenId> find(std::string_view word) const;
  TokenId id(std::string_view word) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids, bool skip_special = true) const;

  // <bos> followed by the words of `text`; every id counts as prompt.
  Sequence prompt(std::string_view text) const;
  // <bos> + words + <eos>; prompt_len is set to `prompt_words` + 1.
  Sequence sentence(std::string_view text, std::size_t prompt_words = 0) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace nano
