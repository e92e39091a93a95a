#pragma once

// Seeded templated corpus over disjoint attribute word pools, plus the exact
// pool-membership labeler that backs the oracle annotators.

#include "nano/vocab.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace nano {

struct AttributePool {
  std::string name;
  std::vector<std::string> nouns;
  std::vector<std::string> verbs;
  std::vector<std::string> adjectives;

  std::vector<std::string> words() const;
};

struct CorpusSpec {
  std::vector<AttributePool> pools;
  std::vector<double> mixture;  // base proportion per pool
  // Whitespace-separated tokens; {N}, {V}, {A} are filled from the sentence's
  // pool, {a} from the neutral adjectives, anything else is literal.
  std::vector<std::string> templates;
  std::vector<std::string> neutral_adjectives;
  double neutral_adjective_rate = 0.5;  // chance an {A} slot takes a neutral word
  std::size_t sentences = 2000;
  std::uint64_t seed = 7;

  // Two topics ("space", "sports") with the given share for the first.
  static CorpusSpec two_topic(double first_share);
  // Four topics with uniform mixture.
  static CorpusSpec four_topic();

  void validate() const;
};

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

class Labeler {
 public:
  Labeler() = default;
  Labeler(const std::vector<AttributePool>& pools, const Vocab& vocab);

  std::size_t attributes() const { return names_.size(); }
  const std::string& name(std::size_t a) const { return names_.at(a); }
  std::optional<std::size_t> attribute_index(std::string_view name) const;

  // Occurrences of each pool's words among the ids.
  std::vector<std::size_t> counts(std::span<const TokenId> ids) const;
  // Share of attribute `a` among all pool words; nullopt with no pool words.
  std::optional<double> fraction(std::span<const TokenId> ids, std::size_t a) const;
  // The attribute holding at least kLabelShare of the pool words, if any.
  std::optional<std::size_t> label(std::span<const TokenId> ids) const;

  static constexpr double kLabelShare = 0.6;

 private:
  std::vector<std::string> names_;
  std::unordered_map<TokenId, std::size_t> pool_of_;
};

struct SyntheticCorpus {
  std::vector<std::string> sentences;
  std::vector<std::size_t> topics;  // generating pool per sentence
  Vocab vocab;
  Labeler labeler;

  std::vector<Sequence> sequences() const;
};

SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec);

// Vocabulary covering every word the spec can emit (independent of sampling).
Vocab corpus_vocab(const CorpusSpec& spec);

}  // namespace nano
