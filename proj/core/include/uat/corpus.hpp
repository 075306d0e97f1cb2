#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uat/mlm.hpp"
#include "uat/vocab.hpp"

namespace uat {

// A corpus sentence with one token replaced by [mask].
struct MaskedExample {
  TokenIds tokens;
  std::size_t mask_pos = 0;
  TokenId label = 0;
  std::size_t source_line = 0;
};

enum class InjectionPhase { kSearch, kAttack };

struct AssembledInput {
  TokenIds tokens;
  std::size_t mask_pos = 0;
  Span trigger_span;
  InjectionPhase origin = InjectionPhase::kSearch;
};

// Token layout of a prompt around the input sentence: prefix ⊕ {sen} ⊕ <T> ⊕ suffix.
// The suffix holds the single [mask].
struct TemplateLayout {
  TokenIds prefix;
  TokenIds suffix;
};

struct MaskedDatasetOptions {
  std::size_t n_examples = 512;
  std::uint64_t seed = 0;
  // Only mask content words (no punctuation, no function words).
  bool content_words_only = false;
};

struct MaskedDataset {
  std::vector<MaskedExample> examples;
  // Corpus lines passed over because they had nothing maskable.
  std::size_t skipped_lines = 0;
};

bool is_function_word(std::string_view token);

// Masks one uniformly chosen maskable token per drawn line. Lines are visited
// in a seeded random order, cycling when n_examples exceeds the corpus.
MaskedDataset make_masked_dataset(std::span<const std::string> corpus, const Vocabulary& vocab,
                                  const MaskedDatasetOptions& options);

// Places the trigger immediately before the mask. Over-long results lose
// tokens from the left of the example prefix, then from the right end.
AssembledInput assemble_phase1(const MaskedExample& example, std::span<const TokenId> trigger,
                               std::size_t max_len);

// prefix ⊕ sentence ⊕ trigger ⊕ suffix; the sentence is truncated from the
// left when the result would exceed max_len.
AssembledInput assemble_phase2(std::span<const TokenId> sentence, std::span<const TokenId> trigger,
                               const TemplateLayout& layout, std::size_t max_len);

// JSON-lines: {text_tokens, mask_pos, label, source_line} per example.
std::string masked_dataset_to_jsonl(std::span<const MaskedExample> examples, const Vocabulary& vocab);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// ---- synthetic toy world --------------------------------------------------

// Plain-text corpus of short template sentences covering news topics,
// reviews and rumours; stands in for a general pre-training corpus.
std::vector<std::string> synthetic_corpus(std::size_t n_lines, std::uint64_t seed);

}  // namespace uat
