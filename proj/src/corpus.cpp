#include "nano/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace nano {

namespace {

AttributePool space_pool() {
  return {"space",
          {"planet", "rocket", "star", "orbit", "comet", "galaxy", "moon", "astronaut", "telescope", "satellite",
           "asteroid", "nebula", "crater", "shuttle", "probe", "cosmos", "meteor", "spacecraft", "capsule",
           "observatory", "eclipse", "quasar", "pulsar", "module", "launchpad"},
          {"launches", "orbits", "drifts", "explores", "circles", "glows", "spins", "lands", "docks", "ascends",
           "scans", "transmits"},
          {"lunar", "solar", "stellar", "cosmic", "orbital", "galactic", "interstellar", "celestial"}};
}

AttributePool sports_pool() {
  return {"sports",
          {"team", "ball", "coach", "goal", "player", "stadium", "match", "league", "referee", "striker", "trophy",
           "season", "pitcher", "racket", "court", "medal", "goalkeeper", "tournament", "umpire", "jersey",
           "championship", "playoff", "athlete", "scoreboard", "dugout"},
          {"scores", "kicks", "wins", "passes", "defends", "trains", "tackles", "shoots", "dribbles", "serves",
           "sprints", "cheers"},
          {"athletic", "winning", "rival", "olympic", "varsity", "sporty", "undefeated", "professional"}};
}

AttributePool politics_pool() {
  return {"politics",
          {"senator", "election", "ballot", "congress", "policy", "governor", "campaign", "parliament", "vote",
           "candidate", "mayor", "legislature", "debate", "minister", "treaty", "reform"},
          {"debates", "votes", "legislates", "campaigns", "vetoes", "negotiates", "governs", "lobbies"},
          {"partisan", "legislative", "electoral", "bipartisan", "diplomatic", "federal"}};
}

AttributePool cooking_pool() {
  return {"cooking",
          {"chef", "oven", "recipe", "kitchen", "soup", "pastry", "skillet", "sauce", "dough", "spice", "bakery",
           "noodle", "broth", "dessert", "grill", "ladle"},
          {"bakes", "stirs", "simmers", "roasts", "fries", "seasons", "chops", "whisks"},
          {"savory", "crispy", "spicy", "tender", "baked", "culinary"}};
}

std::vector<std::string> default_templates() {
  return {"the {A} {N} {V} the {N} .",
          "the {N} {V} near the {A} {N} .",
          "the {A} {N} and the {N} {V} .",
          "the {N} {V} the {A} {N} today .",
          "the {N} {V} with the {N} and the {N} .",
          "the {A} {N} {V} .",
          "the {a} {N} {V} over the {N} again .",
          "the {N} {V} while the {a} {N} {V} ."};
}

std::vector<std::string> default_neutral_adjectives() {
  return {"big", "small", "old", "new", "quiet", "bright", "busy", "famous"};
}

const std::vector<std::string>& pick_list(const AttributePool& p, char slot) {
  switch (slot) {
    case 'N':
      return p.nouns;
    case 'V':
      return p.verbs;
    default:
      return p.adjectives;
  }
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

}  // namespace

std::vector<std::string> AttributePool::words() const {
  std::vector<std::string> out = nouns;
  out.insert(out.end(), verbs.begin(), verbs.end());
  out.insert(out.end(), adjectives.begin(), adjectives.end());
  return out;
}

CorpusSpec CorpusSpec::two_topic(double first_share) {
  CorpusSpec s;
  s.pools = {space_pool(), sports_pool()};
  s.mixture = {first_share, 1.0 - first_share};
  s.templates = default_templates();
  s.neutral_adjectives = default_neutral_adjectives();
  return s;
}

CorpusSpec CorpusSpec::four_topic() {
  CorpusSpec s;
  s.pools = {space_pool(), sports_pool(), politics_pool(), cooking_pool()};
  s.mixture = {0.25, 0.25, 0.25, 0.25};
  s.templates = default_templates();
  s.neutral_adjectives = default_neutral_adjectives();
  return s;
}

void CorpusSpec::validate() const {
  if (pools.size() < 2) throw std::invalid_argument("corpus spec: need at least two attribute pools");
  if (mixture.size() != pools.size()) throw std::invalid_argument("corpus spec: mixture size must match pools");
  double total = 0.0;
  for (double m : mixture) {
    if (m < 0.0) throw std::invalid_argument("corpus spec: negative mixture weight");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("corpus spec: mixture must sum to 1");
  if (templates.empty()) throw std::invalid_argument("corpus spec: no templates");
  std::set<std::string> seen;
  for (const auto& p : pools) {
    if (p.nouns.empty() || p.verbs.empty() || p.adjectives.empty()) {
      throw std::invalid_argument("corpus spec: pool " + p.name + " has an empty word class");
    }
    for (const auto& w : p.words()) {
      if (!seen.insert(w).second) throw std::invalid_argument("corpus spec: word '" + w + "' appears in two pools");
    }
  }
  for (const auto& w : neutral_adjectives) {
    if (seen.count(w)) throw std::invalid_argument("corpus spec: neutral word '" + w + "' overlaps a pool");
  }
  for (const auto& t : templates) {
    for (const auto& tok : split_words(t)) {
      if (tok == "{a}" && neutral_adjectives.empty()) throw std::invalid_argument("corpus spec: {a} needs neutral words");
      if (tok.front() != '{' && seen.count(tok)) {
        throw std::invalid_argument("corpus spec: template literal '" + tok + "' overlaps a pool");
      }
    }
  }
}

nlohmann::json to_json(const CorpusSpec& spec) {
  nlohmann::json pools = nlohmann::json::array();
  for (const auto& p : spec.pools) {
    pools.push_back({{"name", p.name}, {"nouns", p.nouns}, {"verbs", p.verbs}, {"adjectives", p.adjectives}});
  }
  return {{"pools", pools},
          {"mixture", spec.mixture},
          {"templates", spec.templates},
          {"neutral_adjectives", spec.neutral_adjectives},
          {"neutral_adjective_rate", spec.neutral_adjective_rate},
          {"sentences", spec.sentences},
          {"seed", spec.seed}};
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  for (const auto& p : j.at("pools")) {
    s.pools.push_back({p.at("name").get<std::string>(), p.at("nouns").get<std::vector<std::string>>(),
                       p.at("verbs").get<std::vector<std::string>>(),
                       p.at("adjectives").get<std::vector<std::string>>()});
  }
  s.mixture = j.at("mixture").get<std::vector<double>>();
  s.templates = j.at("templates").get<std::vector<std::string>>();
  s.neutral_adjectives = j.value("neutral_adjectives", std::vector<std::string>{});
  s.neutral_adjective_rate = j.value("neutral_adjective_rate", 0.5);
  s.sentences = j.value("sentences", std::size_t{2000});
  s.seed = j.value("seed", std::uint64_t{7});
  return s;
}

Labeler::Labeler(const std::vector<AttributePool>& pools, const Vocab& vocab) {
  for (std::size_t a = 0; a < pools.size(); ++a) {
    names_.push_back(pools[a].name);
    for (const auto& w : pools[a].words()) {
      if (auto id = vocab.find(w)) {
        if (!pool_of_.emplace(*id, a).second) throw std::invalid_argument("labeler: overlapping pools at " + w);
      }
    }
  }
}

std::optional<std::size_t> Labeler::attribute_index(std::string_view name) const {
  for (std::size_t a = 0; a < names_.size(); ++a) {
    if (names_[a] == name) return a;
  }
  return std::nullopt;
}

std::vector<std::size_t> Labeler::counts(std::span<const TokenId> ids) const {
  std::vector<std::size_t> c(names_.size(), 0);
  for (TokenId t : ids) {
    if (auto it = pool_of_.find(t); it != pool_of_.end()) ++c[it->second];
  }
  return c;
}

std::optional<double> Labeler::fraction(std::span<const TokenId> ids, std::size_t a) const {
  const auto c = counts(ids);
  std::size_t total = 0;
  for (auto x : c) total += x;
  if (total == 0) return std::nullopt;
  return static_cast<double>(c.at(a)) / static_cast<double>(total);
}

std::optional<std::size_t> Labeler::label(std::span<const TokenId> ids) const {
  const auto c = counts(ids);
  std::size_t total = 0;
  for (auto x : c) total += x;
  if (total == 0) return std::nullopt;
  for (std::size_t a = 0; a < c.size(); ++a) {
    if (static_cast<double>(c[a]) >= kLabelShare * static_cast<double>(total)) return a;
  }
  return std::nullopt;
}

std::vector<Sequence> SyntheticCorpus::sequences() const {
  std::vector<Sequence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(vocab.sentence(s));
  return out;
}

Vocab corpus_vocab(const CorpusSpec& spec) {
  std::set<std::string> words;
  for (const auto& p : spec.pools) {
    for (auto& w : p.words()) words.insert(std::move(w));
  }
  for (const auto& w : spec.neutral_adjectives) words.insert(w);
  for (const auto& t : spec.templates) {
    for (auto& tok : split_words(t)) {
      if (tok.front() != '{') words.insert(std::move(tok));
    }
  }
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

SyntheticCorpus make_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.vocab = corpus_vocab(spec);
  corpus.labeler = Labeler(spec.pools, corpus.vocab);

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<std::size_t> topic_dist(spec.mixture.begin(), spec.mixture.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < spec.sentences; ++i) {
    const std::size_t topic = topic_dist(rng);
    const auto& pool = spec.pools[topic];
    const auto& tmpl = pick(spec.templates, rng);
    std::string line;
    for (const auto& tok : split_words(tmpl)) {
      std::string word;
      if (tok == "{a}") {
        word = pick(spec.neutral_adjectives, rng);
      } else if (tok == "{A}" && !spec.neutral_adjectives.empty() && unif(rng) < spec.neutral_adjective_rate) {
        word = pick(spec.neutral_adjectives, rng);
      } else if (tok.size() == 3 && tok.front() == '{' && tok.back() == '}') {
        word = pick(pick_list(pool, tok[1]), rng);
      } else {
        word = tok;
      }
      if (!line.empty()) line += ' ';
      line += word;
    }
    corpus.sentences.push_back(std::move(line));
    corpus.topics.push_back(topic);
  }
  return corpus;
}

}  // namespace nano
