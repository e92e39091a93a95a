#include "oracles.hpp"
#include "support.hpp"

#include "nano/checkpoint.hpp"

#include <gtest/gtest.h>

using namespace nano;

namespace {

using test::random_head_critic;

}  // namespace

TEST(DistN, HandCases) {
  const std::vector<TokenId> abab{5, 6, 5, 6};
  EXPECT_DOUBLE_EQ(dist_n(abab, 1), 0.5);
  EXPECT_DOUBLE_EQ(dist_n(abab, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(dist_n(abab, 3), 1.0);
  EXPECT_NEAR(mean_dist123(abab), (0.5 + 2.0 / 3.0 + 1.0) / 3.0, 1e-15);
  const std::vector<TokenId> distinct{1, 2, 3, 4, 5};
  for (int n = 1; n <= 3; ++n) EXPECT_DOUBLE_EQ(dist_n(distinct, n), 1.0);
  const std::vector<TokenId> same(10, 7);
  EXPECT_DOUBLE_EQ(dist_n(same, 1), 0.1);
  test::WarningCapture w;
  const std::vector<TokenId> two{1, 2};
  EXPECT_DOUBLE_EQ(dist_n(two, 3), 1.0);
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(NormalizeGradient, UnitFrobeniusPerTensor) {
  auto out = normalize_gradient({Matrix::Constant(2, 2, 2.0), Matrix::Zero(3, 1)});
  ASSERT_TRUE(out);
  EXPECT_TRUE((*out)[0].isApprox(Matrix::Constant(2, 2, 0.5)));
  EXPECT_TRUE((*out)[1].isZero(0.0));
  std::vector<Matrix> r;
  for (int i = 0; i < 6; ++i) r.push_back(Matrix::Random(4, 3) * (i + 1));
  out = normalize_gradient(r);
  ASSERT_TRUE(out);
  for (const auto& m : *out) EXPECT_NEAR(m.norm(), 1.0, 1e-6);
  r[2](1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(normalize_gradient(r).has_value());
  r[2](1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(normalize_gradient(r).has_value());
}

TEST(Decoder, WithoutCriticIsPlainSampling) {
  auto lm = test::random_lm(9, 1, 3);
  GenerationConfig cfg;
  cfg.length = 10;
  cfg.k = 1;
  const auto prompt = test::seq_of({1, 4}, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    SamplingConfig sc = cfg.sampling;
    sc.max_len = 10;
    const auto g = generate_controlled(prompt, lm, nullptr, cfg, a);
    EXPECT_FALSE(g.controlled);
    EXPECT_EQ(g.seq, sample_continuation(lm, prompt, nullptr, sc, b).seq);
  }
}

// Exhaustive next-token enumeration with deterministic continuations and no
// state update: every candidate can be rebuilt from scratch, so the committed
// tokens and the returned sequence must match a brute-force search.
TEST(Decoder, MatchesBruteForceSearch) {
  const int vocab = 8;
  GenerationConfig cfg;
  cfg.length = 6;
  cfg.k = vocab;
  cfg.eta = 0.0;
  cfg.expansion = Expansion::enumerate_next_token;
  cfg.sampling.temperature = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto lm = test::random_lm(vocab, 1, 100 + trial);
    lm.freeze_embedding();
    const auto critic = random_head_critic(lm, 500 + trial);
    Rng rng(trial);
    const auto g = generate_controlled(test::seq_of({1}, 1), lm, &critic, cfg, rng);
    const auto oracle = test::brute_force_decode(lm, critic, cfg, test::seq_of({1}, 1), vocab);
    ASSERT_FALSE(oracle.all_gated) << "trial " << trial;
    ASSERT_EQ(g.committed.size(), oracle.committed.size()) << "trial " << trial;
    for (std::size_t step = 0; step < oracle.committed.size(); ++step) {
      EXPECT_EQ(g.candidates[g.committed[step]].seq.ids[1 + step], oracle.committed[step])
          << "trial " << trial << " step " << step;
    }
    EXPECT_EQ(g.seq, oracle.best) << "trial " << trial;
  }
}

// With a moving state the candidates cannot be rebuilt, but their recorded
// hard losses can be re-scored and the choices re-derived.
TEST(Decoder, CommitsBestRecordedCandidate) {
  const auto& w = test::tiny_world();
  const auto critic = random_head_critic(w.world.pretrained, 7);
  GenerationConfig cfg;
  cfg.length = 10;
  cfg.k = 4;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto g = generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, &critic, cfg, rng);
    ASSERT_TRUE(g.controlled);
    ASSERT_EQ(g.candidates.size(), g.committed.size() * 4);
    double global = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < g.committed.size(); ++p) {
      std::size_t best = p * 4;
      for (std::size_t c = p * 4; c < p * 4 + 4; ++c) {
        const auto& cand = g.candidates[c];
        EXPECT_NEAR(test::oracle_hard_loss(critic, cand.seq, cfg.fluency_threshold), cand.hard_loss, 1e-9);
        if (cand.hard_loss < g.candidates[best].hard_loss) best = c;
        global = std::min(global, cand.hard_loss);
      }
      if (std::isfinite(g.candidates[best].hard_loss)) {
        EXPECT_EQ(g.committed[p], best);
      }
    }
    if (!g.returned_fallback) {
      EXPECT_NEAR(test::oracle_hard_loss(critic, g.seq, cfg.fluency_threshold), global, 1e-12);
    }
    EXPECT_EQ(std::vector<TokenId>(g.seq.ids.begin(), g.seq.ids.begin() + 2), w.world.vocab.prompt("the").ids);
  }
}

TEST(Decoder, FluencyGateHolds) {
  const auto& w = test::tiny_world();
  const auto critic = random_head_critic(w.world.pretrained, 9);
  GenerationConfig cfg;
  cfg.length = 10;
  cfg.k = 2;
  cfg.fluency_threshold = 0.3;
  int below = 0, fallbacks = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const auto g = generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, &critic, cfg, rng);
    fallbacks += g.returned_fallback;
    below += mean_dist123(g.seq.ids) < cfg.fluency_threshold && !g.returned_fallback;
  }
  EXPECT_EQ(below, 0);
  EXPECT_EQ(fallbacks, 0);
}

TEST(Decoder, AllGatedFallsBackToMostFluent) {
  auto lm = test::random_lm(8, 1, 5);
  lm.freeze_embedding();
  const auto critic = random_head_critic(lm, 5);
  GenerationConfig cfg;
  cfg.length = 6;
  cfg.k = 3;
  cfg.fluency_threshold = 1.0;  // the repeated prompt token keeps every dist-1 below 1
  Rng rng(1);
  const auto g = generate_controlled(test::seq_of({1, 4, 4}, 3), lm, &critic, cfg, rng);
  EXPECT_TRUE(g.returned_fallback);
  EXPECT_EQ(g.position_fallbacks, static_cast<int>(g.committed.size()));
  double best = -1.0;
  for (const auto& c : g.candidates) best = std::max(best, c.fluency);
  EXPECT_DOUBLE_EQ(mean_dist123(g.seq.ids), best);
}

TEST(Decoder, LeavesWeightsUntouchedAndChecksVocab) {
  const auto& w = test::tiny_world();
  const auto critic = random_head_critic(w.world.pretrained, 11);
  const auto before = lm_hash(w.world.pretrained, w.world.vocab);
  const auto critic_before = critic_hash(critic, w.world.vocab);
  GenerationConfig cfg;
  cfg.length = 8;
  cfg.k = 3;
  cfg.eta = 0.5;
  Rng rng(2);
  generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, &critic, cfg, rng);
  EXPECT_EQ(lm_hash(w.world.pretrained, w.world.vocab), before);
  EXPECT_EQ(critic_hash(critic, w.world.vocab), critic_before);

  auto other = test::random_lm(9, 1, 1);
  EXPECT_THROW(generate_controlled(test::seq_of({1}, 1), other, &critic, cfg, rng), std::invalid_argument);
  cfg.length = 100;
  EXPECT_THROW(generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, &critic, cfg, rng),
               ContextLengthError);
}

TEST(Decoder, SoftLossGradientWrtState) {
  auto lm = test::random_lm(9, 2, 31).frozen_copy();
  auto c = random_head_critic(test::random_lm(9, 2, 31), 32);
  const auto x = test::seq_of({1, 4, 6}, 1);
  const auto cont = test::seq_of({1, 4, 6, 3, 8, 2}, 1);
  KVState h = forward(lm, std::span(x.ids).first(2)).state.detached(true);
  std::vector<ag::Var> leaves;
  for (auto& l : h.layers) {
    leaves.push_back(l.k);
    leaves.push_back(l.v);
  }
  const double err = test::gradient_rel_error([&] { return soft_loss(lm, c, x, cont, h); },
                                              [&] {
                                                ag::NoGradGuard g;
                                                return soft_loss(lm, c, x, cont, h)->value(0, 0);
                                              },
                                              leaves, 1e-4);
  EXPECT_LT(err, 1e-3);
}

TEST(Decoder, TrainedCriticSteersTopic) {
  const auto& w = test::tiny_world();
  std::vector<RatedSample> data;
  for (std::size_t i = 0; i < 80; ++i) {
    data.push_back({w.world.vocab.sentence(w.corpus.sentences[i], 1), w.corpus.topics[i] == 0 ? 5 : 1,
                    Origin::generated, 1});
  }
  auto tc = TrainConfig::critic_defaults();
  tc.lr = 1e-3;
  const auto critic = train_critic(data, CriticSpec::make(CriticMode::single_topic), tc, w.world.pretrained).critic;
  GenerationConfig cfg;
  cfg.length = 12;
  cfg.k = 4;
  double plain = 0.0, steered = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng a(seed), b(seed);
    const auto p = generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, nullptr, cfg, a);
    const auto s = generate_controlled(w.world.vocab.prompt("the"), w.world.pretrained, &critic, cfg, b);
    plain += w.world.labeler.fraction(p.seq.ids, 0).value_or(0.0);
    steered += w.world.labeler.fraction(s.seq.ids, 0).value_or(0.0);
  }
  EXPECT_GT(steered, plain);
}
