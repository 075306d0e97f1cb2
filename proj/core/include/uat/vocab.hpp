#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uat {

using TokenId = std::uint32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kMaskId = 0;
inline constexpr TokenId kPadId = 1;
inline constexpr TokenId kUnkId = 2;
inline constexpr TokenId kClsId = 3;
inline constexpr std::size_t kNumSpecial = 4;

inline constexpr std::string_view kMaskToken = "[mask]";
inline constexpr std::string_view kPadToken = "[pad]";
inline constexpr std::string_view kUnkToken = "[unk]";
inline constexpr std::string_view kClsToken = "[cls]";

inline constexpr std::size_t kMinVocabSize = 16;
inline constexpr std::size_t kMaxVocabSize = 65536;

// Lowercases, splits on whitespace, and splits every ASCII punctuation
// character into its own token. The literal "[mask]" survives as one token.
std::vector<std::string> normalize(std::string_view text);

// Word-level vocabulary. Ids 0..3 are [mask], [pad], [unk], [cls].
class Vocabulary {
 public:
  Vocabulary();
  // Specials are prepended; `words` must not contain them or duplicates.
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return id_to_token_.size(); }
  bool contains(std::string_view token) const;
  // Unknown tokens map to [unk].
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  static bool is_special(TokenId id) { return id < kNumSpecial; }

  TokenIds encode(std::string_view text) const;
  // Space-joined tokens.
  std::string decode(std::span<const TokenId> ids) const;
  std::vector<std::string> to_strings(std::span<const TokenId> ids) const;

  // One token per line; line number == id.
  void save_text(const std::filesystem::path& path) const;
  static Vocabulary load_text(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

// Ranks tokens by descending frequency, ties broken lexicographically.
// Tokens seen fewer than min_freq times are left out (they encode to [unk]).
// max_size counts the four special tokens.
Vocabulary build_vocab(std::span<const std::string> corpus_lines, std::size_t max_size,
                       std::size_t min_freq = 1);

}  // namespace uat
