#include "nano/vocab.hpp"

#include <algorithm>
#include <set>

namespace nano {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> words) {
  tokens_ = {std::string(kPad), std::string(kBos), std::string(kEos)};
  for (auto& w : words) {
    if (w == kPad || w == kBos || w == kEos) continue;
    if (w.empty()) throw std::invalid_argument("vocab: empty token");
    tokens_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("vocab: duplicate token " + tokens_[i]);
    }
  }
  if (tokens_.size() < 8) throw std::invalid_argument("vocab: need at least 8 tokens");
}

Vocab Vocab::from_corpus(std::span<const std::string> lines) {
  std::set<std::string> words;
  for (const auto& line : lines) {
    for (auto& w : split_words(line)) words.insert(std::move(w));
  }
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

std::optional<TokenId> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view word) const {
  if (auto found = find(word)) return *found;
  throw UnknownTokenError(std::string(word));
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw std::out_of_range("vocab: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids, bool skip_special) const {
  std::string out;
  for (TokenId t : ids) {
    if (skip_special && (t == pad() || t == bos() || t == eos())) continue;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

Sequence Vocab::prompt(std::string_view text) const {
  Sequence s;
  s.ids.push_back(bos());
  for (TokenId t : encode(text)) s.ids.push_back(t);
  s.prompt_len = s.ids.size();
  return s;
}

Sequence Vocab::sentence(std::string_view text, std::size_t prompt_words) const {
  Sequence s;
  s.ids.push_back(bos());
  for (TokenId t : encode(text)) s.ids.push_back(t);
  s.ids.push_back(eos());
  s.prompt_len = std::min(prompt_words + 1, s.ids.size());
  return s;
}

}  // namespace nano
