#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dwiz/corpus.hpp"

namespace dwiz {

using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  /// `tokens` lists the non-reserved tokens in index order (index 2 onward).
  Vocabulary(std::vector<std::string> tokens, int min_count);

  std::size_t size() const noexcept { return index_to_token_.size(); }
  int min_count() const noexcept { return min_count_; }

  TokenId index_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  /// Tokens from index 2 onward.
  std::vector<std::string> regular_tokens() const;

  /// CRC32 over the token list; equal vocabularies have equal fingerprints.
  std::uint32_t fingerprint() const noexcept { return fingerprint_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.index_to_token_ == b.index_to_token_;
  }

 private:
  std::vector<std::string> index_to_token_;
  std::unordered_map<std::string, TokenId> token_to_index_;
  int min_count_ = 1;
  std::uint32_t fingerprint_ = 0;
};

/// Keeps every training token seen at least `min_count` times. Indices go
/// by descending frequency, then lexicographically.
Vocabulary build_vocabulary(const std::vector<Conversation>& train_conversations, int min_count);

/// Fixed-length id sequence: keeps the last `max_len` tokens and left-pads
/// with PAD; unknown tokens map to UNK.
std::vector<TokenId> encode_utterance(const Vocabulary& vocab,
                                      const std::vector<std::string>& tokens,
                                      std::size_t max_len);

std::size_t count_oov(const Vocabulary& vocab, const std::vector<std::string>& tokens);

}  // namespace dwiz
