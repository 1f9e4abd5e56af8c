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

#include "helioqa/tokenize.hpp"

#include <algorithm>
#include <limits>

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"

namespace helioqa::tokenize {

namespace {

bool is_special(const SpecialIds& s, TokenId id) {
  return id == s.pad || id == s.bos || id == s.eos || id == s.newline;
}

// Replaces every non-overlapping occurrence of (left, right), scanning left
// to right.
void apply_merge(std::vector<TokenId>& seq, TokenId left, TokenId right, TokenId merged) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size(); ++w) {
    if (r + 1 < seq.size() && seq[r] == left && seq[r + 1] == right) {
      seq[w] = merged;
      r += 2;
    } else {
      seq[w] = seq[r];
      ++r;
    }
  }
  seq.resize(w);
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto word_end = [&](std::size_t k) {
    while (k < n && text[k] != ' ' && text[k] != '\n') ++k;
    return k;
  };
  while (i < n) {
    const char c = text[i];
    if (c == '\n') {
      pieces.push_back(text.substr(i, 1));
      ++i;
    } else if (c == ' ') {
      std::size_t j = i;
      while (j < n && text[j] == ' ') ++j;
      if (j < n && text[j] != '\n') {
        // the last space of the run leads the following word
        if (j - i > 1) pieces.push_back(text.substr(i, j - 1 - i));
        const std::size_t e = word_end(j);
        pieces.push_back(text.substr(j - 1, e - (j - 1)));
        i = e;
      } else {
        pieces.push_back(text.substr(i, j - i));
        i = j;
      }
    } else {
      const std::size_t e = word_end(i);
      pieces.push_back(text.substr(i, e - i));
      i = e;
    }
  }
  return pieces;
}

TokenizerModel::TokenizerModel() {
  vocab_.reserve(kMinVocabSize);
  for (int b = 0; b < kByteTokens; ++b) vocab_.emplace_back(1, static_cast<char>(b));
  vocab_.emplace_back();      // PAD
  vocab_.emplace_back();      // BOS
  vocab_.emplace_back();      // EOS
  vocab_.emplace_back("\n");  // NEWLINE
}

void TokenizerModel::index_merges() {
  merge_rank_.clear();
  for (std::size_t k = 0; k < merges_.size(); ++k) {
    merge_rank_.emplace(merges_[k], static_cast<TokenId>(kMinVocabSize + k));
  }
}

TokenizerModel TokenizerModel::train(const std::vector<std::string>& corpus, int vocab_size) {
  if (vocab_size < kMinVocabSize) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " below minimum " +
                      std::to_string(kMinVocabSize));
  }
  TokenizerModel model;

  std::map<std::string, long> piece_freq;
  for (const auto& doc : corpus) {
    for (auto p : pretokenize(doc)) {
      if (p != "\n") ++piece_freq[std::string(p)];
    }
  }
  std::vector<std::pair<std::vector<TokenId>, long>> words;
  words.reserve(piece_freq.size());
  for (const auto& [piece, freq] : piece_freq) {
    std::vector<TokenId> seq;
    seq.reserve(piece.size());
    for (unsigned char c : piece) seq.push_back(static_cast<TokenId>(c));
    words.emplace_back(std::move(seq), freq);
  }

  while (model.vocab_size() < vocab_size) {
    std::map<std::pair<TokenId, TokenId>, long> pair_freq;
    for (const auto& [seq, freq] : words) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) pair_freq[{seq[i], seq[i + 1]}] += freq;
    }
    const std::pair<TokenId, TokenId>* best = nullptr;
    long best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best = &pair;
        best_freq = freq;
      } else if (freq == best_freq && best != nullptr) {
        const auto& bl = model.vocab_[best->first];
        const auto& br = model.vocab_[best->second];
        const auto& pl = model.vocab_[pair.first];
        const auto& pr = model.vocab_[pair.second];
        // map order already breaks remaining ties by smaller ids
        if (pl < bl || (pl == bl && pr < br)) best = &pair;
      }
    }
    if (best == nullptr || best_freq < 2) break;

    const auto [left, right] = *best;
    const auto merged = static_cast<TokenId>(model.vocab_.size());
    model.vocab_.push_back(model.vocab_[left] + model.vocab_[right]);
    model.merges_.emplace_back(left, right);
    for (auto& [seq, freq] : words) apply_merge(seq, left, right, merged);
  }
  model.index_merges();
  return model;
}

void TokenizerModel::encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
  std::vector<TokenId> seq;
  seq.reserve(piece.size());
  for (unsigned char c : piece) seq.push_back(static_cast<TokenId>(c));
  while (seq.size() > 1) {
    TokenId best = std::numeric_limits<TokenId>::max();
    std::pair<TokenId, TokenId> best_pair{};
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = merge_rank_.find({seq[i], seq[i + 1]});
      if (it != merge_rank_.end() && it->second < best) {
        best = it->second;
        best_pair = it->first;
      }
    }
    if (best == std::numeric_limits<TokenId>::max()) break;
    apply_merge(seq, best_pair.first, best_pair.second, best);
  }
  out.insert(out.end(), seq.begin(), seq.end());
}

std::vector<TokenId> TokenizerModel::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size() / 2 + 1);
  for (auto piece : pretokenize(text)) {
    if (piece == "\n") {
      ids.push_back(specials_.newline);
    } else {
      encode_piece(piece, ids);
    }
  }
  return ids;
}

std::string TokenizerModel::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab_size()) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab_size()));
    }
    out += vocab_[static_cast<std::size_t>(id)];
  }
  return out;
}

nlohmann::json TokenizerModel::to_json() const {
  nlohmann::json j;
  j["version"] = kFormatVersion;
  auto vocab = nlohmann::json::array();
  for (const auto& v : vocab_) vocab.push_back(base64_encode(v));
  j["vocab"] = std::move(vocab);
  auto merges = nlohmann::json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  j["merges"] = std::move(merges);
  j["special_ids"] = {{"PAD", specials_.pad},
                      {"BOS", specials_.bos},
                      {"EOS", specials_.eos},
                      {"NEWLINE", specials_.newline}};
  return j;
}

TokenizerModel TokenizerModel::from_json(const nlohmann::json& j) {
  TokenizerModel m;
  try {
    if (j.at("version").get<int>() != kFormatVersion) throw IoError("unsupported tokenizer version");
    const auto& sp = j.at("special_ids");
    const SpecialIds defaults;
    if (sp.at("PAD").get<TokenId>() != defaults.pad || sp.at("BOS").get<TokenId>() != defaults.bos ||
        sp.at("EOS").get<TokenId>() != defaults.eos ||
        sp.at("NEWLINE").get<TokenId>() != defaults.newline) {
      throw IoError("tokenizer special ids do not match the expected layout");
    }
    std::vector<std::string> vocab;
    for (const auto& v : j.at("vocab")) vocab.push_back(base64_decode(v.get<std::string>()));
    if (vocab.size() < static_cast<std::size_t>(kMinVocabSize)) throw IoError("tokenizer vocab too small");
    for (std::size_t i = 0; i < static_cast<std::size_t>(kMinVocabSize); ++i) {
      if (vocab[i] != m.vocab_[i]) throw IoError("tokenizer base vocabulary corrupted at id " + std::to_string(i));
    }
    std::vector<std::pair<TokenId, TokenId>> merges;
    for (const auto& pair : j.at("merges")) {
      merges.emplace_back(pair.at(0).get<TokenId>(), pair.at(1).get<TokenId>());
    }
    if (vocab.size() != kMinVocabSize + merges.size()) throw IoError("tokenizer vocab/merge count mismatch");
    for (std::size_t k = 0; k < merges.size(); ++k) {
      const auto id = static_cast<TokenId>(kMinVocabSize + k);
      const auto [a, b] = merges[k];
      if (a < 0 || b < 0 || a >= id || b >= id || is_special(defaults, a) || is_special(defaults, b)) {
        throw IoError("tokenizer merge " + std::to_string(k) + " references an invalid id");
      }
      if (vocab[static_cast<std::size_t>(id)] != vocab[static_cast<std::size_t>(a)] + vocab[static_cast<std::size_t>(b)]) {
        throw IoError("tokenizer merge " + std::to_string(k) + " disagrees with its vocab entry");
      }
    }
    m.vocab_ = std::move(vocab);
    m.merges_ = std::move(merges);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed tokenizer JSON: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("malformed tokenizer JSON: ") + e.what());
  }
  m.index_merges();
  return m;
}

void TokenizerModel::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump() + "\n");
}

TokenizerModel TokenizerModel::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

std::vector<TokenChunk> chunk_corpus(std::span<const TokenId> tokens, int max_seq_len,
                                     const std::string& source_doc) {
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  std::vector<TokenChunk> chunks;
  const auto len = static_cast<std::size_t>(max_seq_len);
  for (std::size_t i = 0; i < tokens.size(); i += len) {
    const std::size_t n = std::min(len, tokens.size() - i);
    chunks.push_back({{tokens.begin() + static_cast<std::ptrdiff_t>(i),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n)},
                      source_doc});
  }
  return chunks;
}

}  // namespace helioqa::tokenize
