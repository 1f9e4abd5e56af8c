// Copyright 2026 The HelioQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Byte-level BPE tokenizer and fixed-length chunking of token streams.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace helioqa {

using TokenId = std::int32_t;

namespace tokenize {

inline constexpr int kFormatVersion = 1;
inline constexpr TokenId kByteTokens = 256;

struct SpecialIds {
  TokenId pad = 256;
  TokenId bos = 257;
  TokenId eos = 258;
  TokenId newline = 259;
};

inline constexpr TokenId kNumSpecials = 4;
inline constexpr TokenId kMinVocabSize = kByteTokens + kNumSpecials;

/// Immutable after training; encode/decode are safe to call concurrently.
class TokenizerModel {
 public:
  /// Byte tokens and specials only, no merges.
  TokenizerModel();

  /// Trains byte-level BPE. Pre-tokenization splits text into newlines,
  /// space runs, and words with at most one leading space; merges never
  /// cross those pieces. Each round merges the most frequent adjacent pair
  /// (ties: smaller left token bytes, then smaller right token bytes) until
  /// `vocab_size` is reached or no pair occurs at least twice.
  /// Throws ConfigError if vocab_size < kMinVocabSize.
  static TokenizerModel train(const std::vector<std::string>& corpus, int vocab_size);

  /// "\n" always maps to the NEWLINE special.
  std::vector<TokenId> encode(std::string_view text) const;

  /// PAD/BOS/EOS render as empty, NEWLINE as "\n". Throws VocabularyError
  /// for ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const SpecialIds& special_ids() const { return specials_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  nlohmann::json to_json() const;
  /// Validates dense ids, merge references and special ids. Throws IoError.
  static TokenizerModel from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static TokenizerModel load(const std::filesystem::path& path);

  friend bool operator==(const TokenizerModel& a, const TokenizerModel& b) {
    return a.vocab_ == b.vocab_ && a.merges_ == b.merges_;
  }

 private:
  void index_merges();
  void encode_piece(std::string_view piece, std::vector<TokenId>& out) const;

  std::vector<std::string> vocab_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  SpecialIds specials_;
  std::map<std::pair<TokenId, TokenId>, TokenId> merge_rank_;  // pair -> merged id
};

/// Splits text into pre-tokenization pieces (see TokenizerModel::train).
std::vector<std::string_view> pretokenize(std::string_view text);

struct TokenChunk {
  std::vector<TokenId> ids;
  std::string source_doc;
};

/// Consecutive non-overlapping chunks of at most `max_seq_len` ids; only the
/// last may be shorter. Throws ConfigError if max_seq_len < 2.
std::vector<TokenChunk> chunk_corpus(std::span<const TokenId> tokens, int max_seq_len,
                                     const std::string& source_doc = {});

}  // namespace tokenize
}  // namespace helioqa
