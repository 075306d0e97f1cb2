#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/corpus.hpp"
#include "uat/error.hpp"
#include "uat/vocab.hpp"

namespace uat {
namespace {

const std::vector<std::string> kLines = {"the cat sat", "dogs bark loudly at night", "the stock fell ."};

Vocabulary vocab() { return build_vocab(kLines, 64); }

TEST(MaskedDataset, MasksExactlyOneTokenWithItsLabel) {
  const auto v = vocab();
  const std::vector<std::string> one = {"the cat sat"};
  MaskedDatasetOptions opts;
  opts.n_examples = 30;
  const auto ds = make_masked_dataset(one, v, opts);
  ASSERT_EQ(ds.examples.size(), 30u);
  const auto original = v.encode("the cat sat");
  for (const auto& ex : ds.examples) {
    ASSERT_LT(ex.mask_pos, 3u);
    EXPECT_EQ(std::count(ex.tokens.begin(), ex.tokens.end(), kMaskId), 1);
    EXPECT_EQ(ex.tokens[ex.mask_pos], kMaskId);
    EXPECT_EQ(ex.label, original[ex.mask_pos]);
    EXPECT_NE(ex.label, kPadId);
    EXPECT_EQ(ex.source_line, 0u);
  }
}

TEST(MaskedDataset, SeedDeterminesDataset) {
  const auto v = vocab();
  MaskedDatasetOptions opts;
  opts.n_examples = 20;
  opts.seed = 4;
  const auto a = make_masked_dataset(kLines, v, opts);
  const auto b = make_masked_dataset(kLines, v, opts);
  ASSERT_EQ(a.examples.size(), b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    EXPECT_EQ(a.examples[i].tokens, b.examples[i].tokens);
    EXPECT_EQ(a.examples[i].mask_pos, b.examples[i].mask_pos);
  }
  opts.seed = 5;
  const auto c = make_masked_dataset(kLines, v, opts);
  bool differs = false;
  for (std::size_t i = 0; i < a.examples.size(); ++i)
    differs |= a.examples[i].tokens != c.examples[i].tokens;
  EXPECT_TRUE(differs);
}

TEST(MaskedDataset, CyclesThroughEveryLine) {
  const auto v = vocab();
  MaskedDatasetOptions opts;
  opts.n_examples = 9;
  const auto ds = make_masked_dataset(kLines, v, opts);
  std::vector<int> seen(3, 0);
  for (const auto& ex : ds.examples) ++seen[ex.source_line];
  EXPECT_EQ(seen, (std::vector<int>{3, 3, 3}));
}

TEST(MaskedDataset, PositionsAreUniform) {
  const std::vector<std::string> one = {"a b c d e"};
  const auto v = build_vocab(one, 16);
  MaskedDatasetOptions opts;
  opts.n_examples = 10000;
  opts.seed = 17;
  const auto ds = make_masked_dataset(one, v, opts);
  std::vector<double> count(5, 0);
  for (const auto& ex : ds.examples) ++count[ex.mask_pos];
  const double n = 10000, p = 0.2, sigma = std::sqrt(n * p * (1 - p));
  for (double c : count) EXPECT_LT(std::abs(c - n * p), 3 * sigma);
}

TEST(MaskedDataset, ContentWordsOnly) {
  const auto v = vocab();
  MaskedDatasetOptions opts;
  opts.n_examples = 200;
  opts.content_words_only = true;
  const auto ds = make_masked_dataset(kLines, v, opts);
  for (const auto& ex : ds.examples) EXPECT_FALSE(is_function_word(v.token(ex.label))) << v.token(ex.label);
  EXPECT_TRUE(is_function_word("the"));
  EXPECT_TRUE(is_function_word("."));
  EXPECT_FALSE(is_function_word("cat"));
}

TEST(MaskedDataset, SkipsLinesWithNothingToMask) {
  const auto v = vocab();
  const std::vector<std::string> lines = {"the .", "cat"};
  MaskedDatasetOptions opts;
  opts.n_examples = 4;
  opts.content_words_only = true;
  const auto ds = make_masked_dataset(lines, v, opts);
  EXPECT_EQ(ds.skipped_lines, 1u);
  for (const auto& ex : ds.examples) EXPECT_EQ(ex.source_line, 1u);
  const std::vector<std::string> none = {"the ."};
  EXPECT_THROW(make_masked_dataset(none, v, opts), Error);
  const std::vector<std::string> empty;
  EXPECT_THROW(make_masked_dataset(empty, v, opts), Error);
}

TEST(AssemblePhase1, InsertsTriggerBeforeMask) {
  MaskedExample ex{{10, 11, kMaskId, 12}, 2, 13, 0};
  const TokenIds trigger = {20, 21};
  const auto in = assemble_phase1(ex, trigger, 16);
  EXPECT_EQ(in.tokens, (TokenIds{10, 11, 20, 21, kMaskId, 12}));
  EXPECT_EQ(in.mask_pos, 4u);
  EXPECT_EQ(in.trigger_span.begin, 2u);
  EXPECT_EQ(in.trigger_span.end, 4u);
  EXPECT_FALSE(in.trigger_span.contains(in.mask_pos));
  EXPECT_EQ(in.origin, InjectionPhase::kSearch);
}

TEST(AssemblePhase1, EmptyTriggerIsIdentity) {
  MaskedExample ex{{10, 11, kMaskId, 12}, 2, 13, 0};
  const auto in = assemble_phase1(ex, {}, 16);
  EXPECT_EQ(in.tokens, ex.tokens);
  EXPECT_EQ(in.mask_pos, 2u);
  EXPECT_TRUE(in.trigger_span.empty());
}

TEST(AssemblePhase1, OverlongInputLosesLeftContextFirst) {
  MaskedExample ex{{10, 11, 12, 13, kMaskId, 14, 15}, 4, 9, 0};
  const TokenIds trigger = {20, 21, 22};
  const auto in = assemble_phase1(ex, trigger, 8);
  EXPECT_EQ(in.tokens, (TokenIds{12, 13, 20, 21, 22, kMaskId, 14, 15}));
  EXPECT_EQ(in.tokens[in.mask_pos], kMaskId);
  const auto tight = assemble_phase1(ex, trigger, 5);
  EXPECT_EQ(tight.tokens, (TokenIds{20, 21, 22, kMaskId, 14}));
  EXPECT_EQ(tight.mask_pos, 3u);
  EXPECT_THROW(assemble_phase1(ex, trigger, 3), Error);
}

TEST(AssemblePhase2, NullAndManualLayouts) {
  const TokenIds sen = {30};
  const TokenIds trigger = {40};
  const TemplateLayout null_layout{{}, {kMaskId}};
  const auto a = assemble_phase2(sen, trigger, null_layout, 16);
  EXPECT_EQ(a.tokens, (TokenIds{30, 40, kMaskId}));
  EXPECT_EQ(a.mask_pos, 2u);
  EXPECT_EQ(a.origin, InjectionPhase::kAttack);

  const TemplateLayout manual{{}, {kMaskId, 50}};
  const auto b = assemble_phase2(sen, trigger, manual, 16);
  EXPECT_EQ(b.tokens, (TokenIds{30, 40, kMaskId, 50}));
  EXPECT_EQ(b.mask_pos, 2u);
  EXPECT_EQ(b.trigger_span.begin, 1u);

  const auto clean = assemble_phase2(sen, {}, manual, 16);
  EXPECT_EQ(clean.tokens, (TokenIds{30, kMaskId, 50}));
}

TEST(AssemblePhase2, TruncatesSentenceFromTheLeft) {
  const TokenIds sen = {30, 31, 32, 33, 34};
  const TokenIds trigger = {40, 41};
  const TemplateLayout layout{{60}, {kMaskId}};
  const auto in = assemble_phase2(sen, trigger, layout, 6);
  EXPECT_EQ(in.tokens, (TokenIds{60, 33, 34, 40, 41, kMaskId}));
  EXPECT_THROW(assemble_phase2(sen, trigger, layout, 3), Error);
  const TemplateLayout no_mask{{}, {50}};
  EXPECT_THROW(assemble_phase2(sen, trigger, no_mask, 16), Error);
}

TEST(MaskedDatasetJsonl, OneObjectPerLine) {
  const auto v = vocab();
  MaskedDatasetOptions opts;
  opts.n_examples = 3;
  const auto ds = make_masked_dataset(kLines, v, opts);
  const auto text = masked_dataset_to_jsonl(ds.examples, v);
  std::istringstream is(text);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line); ++n) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["text_tokens"][j["mask_pos"].get<std::size_t>()], "[mask]");
    EXPECT_TRUE(j.contains("label"));
    EXPECT_TRUE(j.contains("source_line"));
  }
  EXPECT_EQ(n, 3u);
}

TEST(SyntheticCorpus, DeterministicAndSized) {
  const auto a = synthetic_corpus(300, 1);
  EXPECT_EQ(a.size(), 300u);
  EXPECT_EQ(a, synthetic_corpus(300, 1));
  EXPECT_NE(a, synthetic_corpus(300, 2));
  for (const auto& line : a) EXPECT_FALSE(normalize(line).empty());
}

TEST(ReadLines, MissingFile) { EXPECT_THROW(read_lines("/nonexistent/uat/corpus.txt"), Error); }

}  // namespace
}  // namespace uat
