#include "uat/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "uat/error.hpp"
#include "uat/rng.hpp"

namespace uat {

bool is_function_word(std::string_view token) {
  static constexpr std::array<std::string_view, 40> kWords = {
      "a",    "an",   "the",  "and",  "or",    "but",  "of",   "in",    "on",   "at",
      "to",   "for",  "with", "by",   "from",  "is",   "was",  "are",   "were", "be",
      "it",   "this", "that", "these", "those", "i",   "you",  "we",    "they", "he",
      "she",  "its",  "as",   "so",   "very",  "not",  "what", "there", "has",  "had"};
  if (token.size() == 1 && !std::isalnum(static_cast<unsigned char>(token[0]))) return true;
  return std::find(kWords.begin(), kWords.end(), token) != kWords.end();
}

MaskedDataset make_masked_dataset(std::span<const std::string> corpus, const Vocabulary& vocab,
                                  const MaskedDatasetOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyInput, "make_masked_dataset: empty corpus");
  MaskedDataset out;

  // Pre-compute maskable positions per line.
  std::vector<TokenIds> encoded;
  std::vector<std::vector<std::size_t>> maskable;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TokenIds ids = vocab.encode(corpus[i]);
    std::vector<std::size_t> pos;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (Vocabulary::is_special(ids[j])) continue;
      if (options.content_words_only && is_function_word(vocab.token(ids[j]))) continue;
      pos.push_back(j);
    }
    if (pos.empty()) {
      ++out.skipped_lines;
    } else {
      usable.push_back(i);
    }
    encoded.push_back(std::move(ids));
    maskable.push_back(std::move(pos));
  }
  if (usable.empty()) {
    throw Error(ErrorCode::kEmptyInput, "make_masked_dataset: no corpus line has a maskable token");
  }

  Rng rng = make_rng(options.seed, "masked_dataset");
  std::vector<std::size_t> order;
  while (out.examples.size() < options.n_examples) {
    if (order.empty()) {
      order = usable;
      std::shuffle(order.begin(), order.end(), rng);
      std::reverse(order.begin(), order.end());  // pop from the back in shuffled order
    }
    const std::size_t line = order.back();
    order.pop_back();
    const auto& pos = maskable[line];
    const std::size_t p = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
    MaskedExample ex;
    ex.tokens = encoded[line];
    ex.label = ex.tokens[p];
    ex.tokens[p] = kMaskId;
    ex.mask_pos = p;
    ex.source_line = line;
    out.examples.push_back(std::move(ex));
  }
  return out;
}

AssembledInput assemble_phase1(const MaskedExample& example, std::span<const TokenId> trigger,
                               std::size_t max_len) {
  const auto& t = example.tokens;
  std::size_t prefix_begin = 0;
  std::size_t suffix_end = t.size();
  const std::size_t fixed = trigger.size() + 1;  // trigger + mask
  if (fixed > max_len) {
    throw Error(ErrorCode::kInvalidArgument, "assemble_phase1: trigger does not fit max_seq_len");
  }
  std::size_t total = t.size() + trigger.size();
  if (total > max_len) {
    const std::size_t drop = std::min(total - max_len, example.mask_pos);
    prefix_begin = drop;
    total -= drop;
  }
  if (total > max_len) suffix_end -= total - max_len;

  AssembledInput out;
  out.origin = InjectionPhase::kSearch;
  out.tokens.assign(t.begin() + prefix_begin, t.begin() + example.mask_pos);
  out.trigger_span = {out.tokens.size(), out.tokens.size() + trigger.size()};
  out.tokens.insert(out.tokens.end(), trigger.begin(), trigger.end());
  out.mask_pos = out.tokens.size();
  out.tokens.insert(out.tokens.end(), t.begin() + example.mask_pos, t.begin() + suffix_end);
  return out;
}

AssembledInput assemble_phase2(std::span<const TokenId> sentence, std::span<const TokenId> trigger,
                               const TemplateLayout& layout, std::size_t max_len) {
  const std::size_t fixed = layout.prefix.size() + trigger.size() + layout.suffix.size();
  if (fixed > max_len) {
    throw Error(ErrorCode::kInvalidArgument, "assemble_phase2: trigger and template exceed max_seq_len");
  }
  const std::size_t keep = std::min(sentence.size(), max_len - fixed);
  AssembledInput out;
  out.origin = InjectionPhase::kAttack;
  out.tokens = layout.prefix;
  out.tokens.insert(out.tokens.end(), sentence.end() - keep, sentence.end());
  out.trigger_span = {out.tokens.size(), out.tokens.size() + trigger.size()};
  out.tokens.insert(out.tokens.end(), trigger.begin(), trigger.end());
  const std::size_t suffix_at = out.tokens.size();
  out.tokens.insert(out.tokens.end(), layout.suffix.begin(), layout.suffix.end());
  auto it = std::find(layout.suffix.begin(), layout.suffix.end(), kMaskId);
  if (it == layout.suffix.end()) {
    throw Error(ErrorCode::kInvalidArgument, "assemble_phase2: template suffix has no [mask]");
  }
  out.mask_pos = suffix_at + static_cast<std::size_t>(it - layout.suffix.begin());
  return out;
}

std::string masked_dataset_to_jsonl(std::span<const MaskedExample> examples, const Vocabulary& vocab) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::json j = {{"text_tokens", vocab.to_strings(ex.tokens)},
                        {"mask_pos", ex.mask_pos},
                        {"label", vocab.token(ex.label)},
                        {"source_line", ex.source_line}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace uat
