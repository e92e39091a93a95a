#include "support.hpp"

#include <gtest/gtest.h>

using namespace nano;

TEST(Corpus, MixtureMatchesSpec) {
  auto spec = CorpusSpec::two_topic(0.9);
  spec.sentences = 10000;
  const auto c = make_synthetic_corpus(spec);
  ASSERT_EQ(c.sentences.size(), 10000u);
  std::size_t first = 0, labeled_first = 0;
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    first += c.topics[i] == 0;
    const auto seq = c.vocab.sentence(c.sentences[i]);
    const auto label = c.labeler.label(seq.ids);
    ASSERT_TRUE(label.has_value());
    EXPECT_EQ(*label, c.topics[i]);
    labeled_first += *label == 0;
  }
  EXPECT_NEAR(first / 10000.0, 0.9, 0.02);
  EXPECT_EQ(labeled_first, first);
}

TEST(Corpus, SeededAndReproducible) {
  auto spec = CorpusSpec::two_topic(0.5);
  spec.sentences = 50;
  EXPECT_EQ(make_synthetic_corpus(spec).sentences, make_synthetic_corpus(spec).sentences);
  auto other = spec;
  other.seed = 8;
  EXPECT_NE(make_synthetic_corpus(spec).sentences, make_synthetic_corpus(other).sentences);
}

TEST(Corpus, OverlappingPoolsRejected) {
  auto spec = CorpusSpec::two_topic(0.5);
  spec.pools[1].nouns.push_back("rocket");
  EXPECT_THROW(make_synthetic_corpus(spec), std::invalid_argument);
  spec = CorpusSpec::two_topic(0.5);
  spec.mixture = {0.7, 0.7};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Corpus, VocabularyCoversEveryPoolWord) {
  const auto spec = CorpusSpec::four_topic();
  const auto v = corpus_vocab(spec);
  for (const auto& p : spec.pools) {
    for (const auto& w : p.words()) EXPECT_TRUE(v.find(w).has_value()) << w;
  }
  EXPECT_GE(v.size(), 8u);
}

TEST(Corpus, JsonRoundTrip) {
  const auto spec = CorpusSpec::four_topic();
  const auto back = corpus_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back), to_json(spec));
}

TEST(Labeler, HandWrittenSentences) {
  const auto spec = CorpusSpec::two_topic(0.5);
  const auto v = corpus_vocab(spec);
  Labeler l(spec.pools, v);
  const auto space = v.encode("the lunar rocket orbits the moon .");
  EXPECT_EQ(l.label(space), std::optional<std::size_t>(0));
  EXPECT_DOUBLE_EQ(*l.fraction(space, 0), 1.0);
  const auto mixed = v.encode("the rocket scores the goal .");
  EXPECT_DOUBLE_EQ(*l.fraction(mixed, 0), 1.0 / 3.0);
  EXPECT_EQ(l.label(mixed), std::optional<std::size_t>(1));
  const auto even = v.encode("the rocket and the goal .");
  EXPECT_FALSE(l.label(even).has_value());
  EXPECT_FALSE(l.fraction(v.encode("the big ."), 0).has_value());
  EXPECT_EQ(l.attribute_index("sports"), std::optional<std::size_t>(1));
}
