#include "support.hpp"

#include "nano/decoder.hpp"

#include <gtest/gtest.h>

using namespace nano;

namespace {

struct Fixture {
  CorpusSpec spec = CorpusSpec::two_topic(0.5);
  Vocab vocab = corpus_vocab(spec);
  Labeler labeler{spec.pools, vocab};

  Sequence s(const std::string& text) const { return vocab.sentence(text, 1); }
};

}  // namespace

TEST(Metrics, HalfAndHalfReadsFifty) {
  Fixture f;
  std::vector<Sequence> gens;
  for (int i = 0; i < 240; ++i) gens.push_back(f.s(i % 2 ? "the rocket orbits the moon ." : "the team wins the match ."));
  const auto r = evaluate(gens, f.labeler, EvalTargets::distribution({0.5, 0.5}));
  EXPECT_EQ(r.proportions[0], 0.5);
  EXPECT_EQ(r.proportions[1], 0.5);
  EXPECT_EQ(r.tv, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_NE(render_table(r).find("50.0%"), std::string::npos);
}

TEST(Metrics, AllOnTopic) {
  Fixture f;
  const std::vector<Sequence> gens(10, f.s("the comet glows ."));
  const auto r = evaluate(gens, f.labeler, EvalTargets::single(0));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.tv, 0.0);
  EXPECT_EQ(r.perplexity, 0.0);
  EXPECT_EQ(r.fallbacks, 0);
}

TEST(Metrics, UnlabeledCountsAgainstTarget) {
  Fixture f;
  const std::vector<Sequence> gens{f.s("the comet glows ."), f.s("the rocket and the goal ."), f.s("the big ."),
                                   f.s("the team wins .")};
  const auto r = evaluate(gens, f.labeler, EvalTargets::single(0), nullptr, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.25);
  EXPECT_DOUBLE_EQ(r.unlabeled, 0.5);
  EXPECT_DOUBLE_EQ(r.tv, 0.75);
  EXPECT_EQ(r.fallbacks, 2);
  const auto m = evaluate(gens, f.labeler, EvalTargets::distribution({0.5, 0.5}));
  EXPECT_DOUBLE_EQ(m.tv, 0.5);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
}

TEST(Metrics, TotalVariationMatchesFormula) {
  const std::vector<double> p{0.1, 0.4, 0.2, 0.3}, q{0.25, 0.25, 0.25, 0.25};
  double brute = 0.0;
  for (std::size_t i = 0; i < 4; ++i) brute += std::abs(p[i] - q[i]);
  EXPECT_NEAR(total_variation(p, q), 0.5 * brute, 1e-15);
  EXPECT_EQ(total_variation(p, p), 0.0);
  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  EXPECT_EQ(total_variation(a, b), 1.0);
  EXPECT_THROW(total_variation(a, p), std::invalid_argument);
}

TEST(Metrics, FluencyAndDiversity) {
  const auto& w = test::tiny_world();
  std::vector<Sequence> gens;
  for (std::size_t i = 0; i < 20; ++i) gens.push_back(w.world.vocab.sentence(w.corpus.sentences[i], 1));
  const auto r = evaluate(gens, w.world.labeler, EvalTargets::single(0), &w.world.pretrained);
  EXPECT_NEAR(r.perplexity, perplexity(w.world.pretrained, gens), 1e-12);
  double d3 = 0.0;
  for (const auto& g : gens) d3 += dist_n(g.ids, 3);
  EXPECT_NEAR(r.dist3, d3 / 20.0, 1e-12);
  EXPECT_EQ(r, evaluate(gens, w.world.labeler, EvalTargets::single(0), &w.world.pretrained));
}

TEST(Metrics, JsonRoundTripAndErrors) {
  Fixture f;
  const std::vector<Sequence> gens{f.s("the comet glows ."), f.s("the team wins .")};
  const auto r = evaluate(gens, f.labeler, EvalTargets::distribution({0.3, 0.7}), nullptr, 1);
  EXPECT_EQ(eval_report_from_json(to_json(r)), r);
  EXPECT_THROW(evaluate({}, f.labeler, EvalTargets::single(0)), std::invalid_argument);
  EXPECT_THROW(evaluate(gens, f.labeler, EvalTargets::single(5)), std::out_of_range);
  EXPECT_THROW(evaluate(gens, f.labeler, EvalTargets::distribution({1.0})), std::invalid_argument);
}
