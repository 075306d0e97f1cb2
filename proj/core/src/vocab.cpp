#include "uat/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "uat/error.hpp"

namespace uat {

std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '[' && i + kMaskToken.size() <= text.size()) {
      std::string probe(text.substr(i, kMaskToken.size()));
      std::transform(probe.begin(), probe.end(), probe.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (probe == kMaskToken) {
        flush();
        out.emplace_back(kMaskToken);
        i += kMaskToken.size() - 1;
        continue;
      }
    }
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  id_to_token_ = {std::string(kMaskToken), std::string(kPadToken), std::string(kUnkToken),
                  std::string(kClsToken)};
  id_to_token_.insert(id_to_token_.end(), std::make_move_iterator(words.begin()),
                      std::make_move_iterator(words.end()));
  if (id_to_token_.size() > kMaxVocabSize) {
    throw Error(ErrorCode::kInvalidArgument,
                "vocabulary size " + std::to_string(id_to_token_.size()) + " exceeds " +
                    std::to_string(kMaxVocabSize));
  }
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.contains(std::string(token));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= id_to_token_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[id];
}

TokenIds Vocabulary::encode(std::string_view text) const {
  TokenIds ids;
  for (const auto& tok : normalize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

std::vector<std::string> Vocabulary::to_strings(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

void Vocabulary::save_text(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& t : id_to_token_) os << t << '\n';
}

Vocabulary Vocabulary::load_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kMissingFile, "cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  const std::vector<std::string> specials = {std::string(kMaskToken), std::string(kPadToken),
                                             std::string(kUnkToken), std::string(kClsToken)};
  if (lines.size() < kNumSpecial || !std::equal(specials.begin(), specials.end(), lines.begin())) {
    throw Error(ErrorCode::kCorruptHeader, path.string() + ": missing special tokens at ids 0..3");
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + kNumSpecial, lines.end()));
}

Vocabulary build_vocab(std::span<const std::string> corpus_lines, std::size_t max_size,
                       std::size_t min_freq) {
  if (corpus_lines.empty()) throw Error(ErrorCode::kEmptyInput, "build_vocab: empty corpus");
  if (max_size <= kNumSpecial || max_size > kMaxVocabSize) {
    throw Error(ErrorCode::kInvalidArgument,
                "build_vocab: max_size must be in (" + std::to_string(kNumSpecial) + ", " +
                    std::to_string(kMaxVocabSize) + "]");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus_lines)
    for (auto& tok : normalize(line)) ++counts[tok];
  for (auto special : {kMaskToken, kPadToken, kUnkToken, kClsToken}) counts.erase(std::string(special));
  if (counts.empty()) throw Error(ErrorCode::kEmptyInput, "build_vocab: corpus has no tokens");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [tok, n] : ranked) {
    if (n < min_freq || words.size() + kNumSpecial >= max_size) break;
    words.push_back(tok);
  }
  return Vocabulary(std::move(words));
}

}  // namespace uat
