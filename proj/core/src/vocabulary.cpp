#include "dwiz/vocabulary.hpp"

#include <algorithm>
#include <map>

#include <zlib.h>

#include "dwiz/error.hpp"

namespace dwiz {

Vocabulary::Vocabulary() : Vocabulary({}, 1) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, int min_count) : min_count_(min_count) {
  if (min_count < 1) throw InvalidArgument("vocabulary min_count must be >= 1");
  index_to_token_.reserve(tokens.size() + 2);
  index_to_token_.emplace_back(kPadToken);
  index_to_token_.emplace_back(kUnkToken);
  for (auto& t : tokens) index_to_token_.push_back(std::move(t));

  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::size_t i = 0; i < index_to_token_.size(); ++i) {
    const auto& t = index_to_token_[i];
    if (!token_to_index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw InvalidArgument("duplicate vocabulary token '" + t + "'");
    }
    crc = crc32(crc, reinterpret_cast<const Bytef*>(t.data()), static_cast<uInt>(t.size()));
    const Bytef sep = 0;
    crc = crc32(crc, &sep, 1);
  }
  fingerprint_ = static_cast<std::uint32_t>(crc);
}

TokenId Vocabulary::index_of(std::string_view token) const {
  auto it = token_to_index_.find(std::string(token));
  return it == token_to_index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= index_to_token_.size()) {
    throw InvalidArgument("token id out of range: " + std::to_string(id));
  }
  return index_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {index_to_token_.begin() + 2, index_to_token_.end()};
}

Vocabulary build_vocabulary(const std::vector<Conversation>& train_conversations, int min_count) {
  if (min_count < 1) throw InvalidArgument("vocabulary min_count must be >= 1");
  std::map<std::string, std::size_t> freq;
  std::size_t total = 0;
  for (const auto& c : train_conversations) {
    for (const auto& u : c.utterances) {
      for (const auto& t : u.tokens) {
        ++freq[t];
        ++total;
      }
    }
  }
  if (total == 0) throw InvalidArgument("cannot build a vocabulary from an empty training set");

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, n] : freq) {
    if (n >= static_cast<std::size_t>(min_count) && token != Vocabulary::kPadToken &&
        token != Vocabulary::kUnkToken) {
      kept.emplace_back(token, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [token, n] : kept) tokens.push_back(token);
  return Vocabulary(std::move(tokens), min_count);
}

std::vector<TokenId> encode_utterance(const Vocabulary& vocab, const std::vector<std::string>& tokens,
                                      std::size_t max_len) {
  if (max_len == 0) throw InvalidArgument("encode_utterance: max_len must be >= 1");
  std::vector<TokenId> ids(max_len, Vocabulary::kPad);
  const std::size_t take = std::min(max_len, tokens.size());
  const std::size_t first = tokens.size() - take;
  for (std::size_t i = 0; i < take; ++i) {
    ids[max_len - take + i] = vocab.index_of(tokens[first + i]);
  }
  return ids;
}

std::size_t count_oov(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [&](const std::string& t) { return !vocab.contains(t); }));
}

}  // namespace dwiz
