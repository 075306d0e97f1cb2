#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "gradcheck.hpp"
#include "uat/error.hpp"
#include "uat/mlm.hpp"
#include "uat/vocab.hpp"

namespace uat {
namespace {

using testing::tiny_model_config;

// A model that has memorized a handful of short sentences.
struct Memorized {
  std::vector<std::string> lines;
  MlmModel model;
};

const Memorized& memorized() {
  static const Memorized m = [] {
    std::vector<std::string> lines;
    for (int i = 0; i < 24; ++i) {
      lines.push_back("the quick brown fox jumps");
      lines.push_back("a b");
      lines.push_back("red apples grow on tall trees");
    }
    // Extra words so the vocabulary clears its minimum size.
    lines.push_back("one two three four five six seven eight nine ten");
    auto vocab = build_vocab(lines, 64);
    MlmConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.max_seq_len = 16;
    cfg.seed = 5;
    PretrainOptions opts;
    opts.epochs = 60;
    opts.batch_size = 8;
    opts.mask_probability = 0.3;
    opts.optimizer.learning_rate = 3e-3;
    opts.seed = 7;
    auto result = pretrain(vocab, lines, cfg, opts);
    return Memorized{lines, std::move(result.model)};
  }();
  return m;
}

TEST(MlmConfig, Validation) {
  auto c = tiny_model_config(32, 1);
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_model_config(8, 1);
  EXPECT_THROW(c.validate(), Error);
  c = tiny_model_config(32, 1);
  EXPECT_EQ(MlmConfig::from_json(c.to_json()), c);
}

TEST(MaskedLm, ParametersMatchExpectedShapes) {
  MaskedLm<float> lm(tiny_model_config(32, 1));
  const auto shapes = lm.expected_shapes();
  ASSERT_EQ(shapes.size(), lm.parameters().size());
  for (std::size_t i = 0; i < shapes.size(); ++i) EXPECT_EQ(lm.parameters()[i].second.shape(), shapes[i]);
  EXPECT_EQ(lm.parameters()[0].second.shape(), (Shape{32, 8}));
}

TEST(MaskedLm, SameSeedSameWeights) {
  MaskedLm<float> a(tiny_model_config(32, 9)), b(tiny_model_config(32, 9)), c(tiny_model_config(32, 10));
  const auto& pa = a.parameters()[0].second.data();
  const auto& pb = b.parameters()[0].second.data();
  const auto& pc = c.parameters()[0].second.data();
  EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
  EXPECT_FALSE(std::equal(pa.begin(), pa.end(), pc.begin()));
}

TEST(PredictMask, SumsToOne) {
  MaskedLm<float> lm(tiny_model_config(40, 3));
  const TokenIds tokens = {7, 9, kMaskId, 12};
  const auto p = lm.predict_mask(tokens, 2);
  ASSERT_EQ(p.size(), 40u);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
  EXPECT_THROW(lm.predict_mask(tokens, 1), Error);
}

TEST(PredictMask, UntrainedModelIsNearUniform) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    MaskedLm<float> lm(tiny_model_config(40, seed));
    const TokenIds tokens = {5, kMaskId, 6, 7};
    const auto p = lm.predict_mask(tokens, 1);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    EXPECT_LT(*hi / *lo, 10.0) << "seed " << seed;
  }
}

TEST(PredictMask, ConcurrentCallsAgree) {
  MaskedLm<float> lm(tiny_model_config(40, 3));
  const TokenIds tokens = {7, 9, kMaskId, 12, 5};
  const auto expected = lm.predict_mask(tokens, 2);
  std::vector<std::vector<double>> got(4);
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < got.size(); ++t)
      threads.emplace_back([&, t] {
        for (int rep = 0; rep < 20; ++rep) got[t] = lm.predict_mask(tokens, 2);
      });
  }
  for (const auto& g : got) EXPECT_EQ(g, expected);
}

TEST(MaskGrad, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = testing::check_mask_grad(seed);
    EXPECT_LT(r.f32_error, 1e-3) << "seed " << seed;
    EXPECT_LT(r.f64_error, 1e-6) << "seed " << seed;
  }
}

TEST(MaskGrad, Deterministic) {
  MaskedLm<float> lm(tiny_model_config(32, 4));
  const TokenIds tokens = {5, 6, kMaskId, 8};
  EXPECT_EQ(lm.mask_grad(tokens, 2, 9, {0, 4}), lm.mask_grad(tokens, 2, 9, {0, 4}));
}

TEST(MaskGrad, ZeroLayerModelSeesOnlyTheMaskPosition) {
  auto cfg = tiny_model_config(32, 4);
  cfg.n_layers = 0;
  MaskedLm<float> lm(cfg);
  const TokenIds tokens = {5, 6, kMaskId, 8};
  const auto g = lm.mask_grad(tokens, 2, 9, {0, 4});
  const std::size_t d = cfg.d_model;
  for (std::size_t row : {0u, 1u, 3u})
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(g[row * d + c], 0.0f);
  double mask_norm = 0;
  for (std::size_t c = 0; c < d; ++c) mask_norm += std::abs(g[2 * d + c]);
  EXPECT_GT(mask_norm, 0.0);
}

TEST(MaskGrad, RejectsBadSpans) {
  MaskedLm<float> lm(tiny_model_config(32, 4));
  const TokenIds tokens = {5, 6, kMaskId, 8};
  EXPECT_THROW(lm.mask_grad(tokens, 2, 9, {0, 0}), Error);
  EXPECT_THROW(lm.mask_grad(tokens, 2, 9, {0, 5}), Error);
  EXPECT_THROW(lm.mask_grad(tokens, 1, 9, {0, 4}), Error);
}

TEST(LeftConditional, NormalizedAndConsistent) {
  MaskedLm<float> lm(tiny_model_config(32, 2));
  const TokenIds prefix = {5, 9, 11};
  const auto dist = lm.left_conditional_distribution(prefix);
  EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-6);
  double total = 0;
  for (TokenId w = 0; w < 32; ++w) {
    const double p = lm.left_conditional(prefix, w);
    EXPECT_NEAR(p, dist[w], 1e-12);
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_THROW(lm.left_conditional({}, 5), Error);
}

TEST(LeftConditional, LongPrefixKeepsRightmostTokens) {
  const auto cfg = tiny_model_config(32, 2);
  MaskedLm<float> lm(cfg);
  TokenIds longest(cfg.max_seq_len - 1);
  for (std::size_t i = 0; i < longest.size(); ++i) longest[i] = TokenId(4 + i % 20);
  EXPECT_NO_THROW(lm.left_conditional(longest, 7));
  TokenIds longer = {30, 31, 29};
  longer.insert(longer.end(), longest.begin(), longest.end());
  EXPECT_DOUBLE_EQ(lm.left_conditional(longer, 7), lm.left_conditional(longest, 7));
}

TEST(SentenceEmbedding, SingleTokenEqualsHiddenState) {
  MaskedLm<float> lm(tiny_model_config(32, 2));
  const TokenIds one = {9};
  const auto e = lm.sentence_embedding(one);
  const auto h = lm.hidden_states(one);
  ASSERT_EQ(e.size(), h.numel());
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_DOUBLE_EQ(e[i], double(h.data()[i]));
}

TEST(SentenceEmbedding, IgnoresPadSuffix) {
  MaskedLm<float> lm(tiny_model_config(32, 2));
  const TokenIds plain = {9, 10, 11};
  const TokenIds padded = {9, 10, 11, kPadId, kPadId};
  const auto a = lm.sentence_embedding(plain);
  const auto b = lm.sentence_embedding(padded);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  EXPECT_EQ(lm.sentence_embedding(plain), lm.sentence_embedding(plain));
  EXPECT_THROW(lm.sentence_embedding(TokenIds{kPadId, kPadId}), Error);
}

TEST(Pretrain, RejectsDegenerateOptions) {
  const std::vector<std::string> lines = {"a b c d e f g h i j k l m"};
  const auto vocab = build_vocab(lines, 32);
  auto cfg = tiny_model_config(vocab.size(), 1);
  PretrainOptions opts;
  opts.mask_probability = 0;
  EXPECT_THROW(pretrain(vocab, lines, cfg, opts), Error);
  opts.mask_probability = 0.15;
  opts.batch_size = 0;
  EXPECT_THROW(pretrain(vocab, lines, cfg, opts), Error);
}

TEST(Pretrain, SeededRunsAreIdentical) {
  const std::vector<std::string> lines = {"the cat sat on the mat", "a dog ran in the park", "birds sing at dawn",
                                          "rain fell all night long"};
  const auto vocab = build_vocab(lines, 64);
  const auto cfg = tiny_model_config(vocab.size(), 3);
  PretrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 2;
  opts.seed = 11;
  const auto a = pretrain(vocab, lines, cfg, opts);
  const auto b = pretrain(vocab, lines, cfg, opts);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  for (std::size_t i = 0; i < a.model.lm.parameters().size(); ++i) {
    const auto x = a.model.lm.parameters()[i].second.data();
    const auto y = b.model.lm.parameters()[i].second.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << a.model.lm.parameters()[i].first;
  }
}

TEST(Pretrain, RepeatedSentenceLossDrops) {
  const std::vector<std::string> lines(16, "one two three four five six seven eight nine ten eleven twelve");
  const auto vocab = build_vocab(lines, 32);
  const auto cfg = tiny_model_config(vocab.size(), 3);
  PretrainOptions opts;
  opts.max_steps = 200;
  opts.epochs = 1000;
  opts.batch_size = 4;
  opts.optimizer.learning_rate = 3e-3;
  opts.seed = 1;
  const auto r = pretrain(vocab, lines, cfg, opts);
  EXPECT_EQ(r.steps, 200u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  for (const auto& [name, t] : r.model.lm.parameters())
    for (float v : t.data()) ASSERT_TRUE(std::isfinite(v)) << name;
}

TEST(Memorization, MaskedWordIsArgmax) {
  const auto& m = memorized();
  auto tokens = m.model.vocab.encode("the quick brown fox jumps");
  const TokenId gold = tokens[2];
  tokens[2] = kMaskId;
  const auto p = m.model.lm.predict_mask(tokens, 2);
  EXPECT_EQ(TokenId(std::max_element(p.begin(), p.end()) - p.begin()), gold);
}

TEST(Memorization, LeftConditionalPrefersSeenContinuation) {
  const auto& m = memorized();
  const TokenIds a = {m.model.vocab.id("a")};
  EXPECT_GT(m.model.lm.left_conditional(a, m.model.vocab.id("b")), m.model.lm.left_conditional(a, a[0]));
}

TEST(PseudoPerplexity, AtLeastOneAndLowOnMemorizedText) {
  const auto& m = memorized();
  const auto tokens = m.model.vocab.encode("red apples grow on tall trees");
  const double ppl = m.model.lm.pseudo_perplexity(tokens);
  EXPECT_GE(ppl, 1.0);
  EXPECT_LT(ppl, 2.0);
  const TokenIds shuffled = {tokens[3], tokens[5], tokens[0], tokens[4], tokens[1], tokens[2]};
  EXPECT_LT(ppl, m.model.lm.pseudo_perplexity(shuffled));
  MaskedLm<float> untrained(tiny_model_config(32, 1));
  EXPECT_GE(untrained.pseudo_perplexity(TokenIds{5, 6, 7}), 1.0);
}

TEST(PseudoPerplexity, AppendingUnknownTokenRaisesIt) {
  const auto& m = memorized();
  std::mt19937_64 rng(3);
  int raised = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto tokens = m.model.vocab.encode(m.lines[rng() % 72]);
    const double before = m.model.lm.pseudo_perplexity(tokens);
    tokens.insert(tokens.begin() + std::ptrdiff_t(rng() % (tokens.size() + 1)), kUnkId);
    if (m.model.lm.pseudo_perplexity(tokens) > before) ++raised;
  }
  EXPECT_GT(raised, 10);
}

TEST(MaskedLmLoss, DropsAfterTraining) {
  const auto& m = memorized();
  std::vector<TokenIds> lines;
  for (std::size_t i = 0; i < 6; ++i) lines.push_back(m.model.vocab.encode(m.lines[i]));
  MlmModel fresh(m.model.vocab, m.model.config());
  EXPECT_LT(masked_lm_loss(m.model, lines, 0.3, 1), masked_lm_loss(fresh, lines, 0.3, 1));
}

}  // namespace
}  // namespace uat
