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

#include <gtest/gtest.h>

#include <random>

#include "helioqa/error.hpp"
#include "helioqa/tokenize.hpp"
#include "test_util.hpp"

namespace helioqa::tokenize {
namespace {

const std::vector<std::string> kCorpus = {
    "Solar flares release magnetic energy. Solar flares heat plasma.\nCMEs follow flares.",
    "A coronal mass ejection carries plasma. Energetic particles follow the shock.\n\nSEP events rise fast."};

// Random UTF-8 mixing ASCII, newlines, Greek, arrows and 4-byte emoji.
std::string random_utf8(std::mt19937_64& rng, int max_len) {
  static const std::vector<std::string> atoms = {"a", "e", " ", "  ", "\n", "\r\n", "\t", "Z", "0", ".",
                                                 "\xCE\xB1", "\xE2\x86\x92", "\xF0\x9F\x8C\x9E", "\xEF\xAC\x81",
                                                 "fl", "are", "\x00"};
  std::uniform_int_distribution<std::size_t> pick(0, atoms.size() - 1);
  std::uniform_int_distribution<int> len(0, max_len);
  std::string s;
  for (int i = len(rng); i > 0; --i) {
    const auto& a = atoms[pick(rng)];
    s += a.empty() ? std::string(1, '\0') : a;
  }
  return s;
}

TEST(Train, FirstMergeOfRepeatedLetters) {
  const auto tok = TokenizerModel::train({"aaab"}, 261);
  ASSERT_EQ(tok.merges().size(), 1u);
  EXPECT_EQ(tok.merges()[0], std::make_pair(TokenId{'a'}, TokenId{'a'}));
  EXPECT_EQ(tok.vocab()[260], "aa");
}

TEST(Train, EmptyCorpusHasOnlyBytesAndSpecials) {
  const auto tok = TokenizerModel::train({""}, 512);
  EXPECT_EQ(tok.vocab_size(), kMinVocabSize);
  EXPECT_TRUE(tok.merges().empty());
}

TEST(Train, RejectsTooSmallVocabulary) { EXPECT_THROW(TokenizerModel::train(kCorpus, 259), ConfigError); }

TEST(Train, DeterministicSerialization) {
  const auto a = TokenizerModel::train(kCorpus, 320);
  const auto b = TokenizerModel::train(kCorpus, 320);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Train, StopsWhenNoPairRepeats) {
  const auto tok = TokenizerModel::train({"abcdefg"}, 400);
  EXPECT_TRUE(tok.merges().empty());
}

// Independent pair count over pre-tokenized pieces for the first merge.
std::pair<TokenId, TokenId> brute_force_first_merge(const std::vector<std::string>& corpus) {
  std::map<std::pair<unsigned char, unsigned char>, int> counts;
  for (const auto& text : corpus) {
    for (auto piece : pretokenize(text)) {
      if (piece == "\n") continue;
      for (std::size_t i = 0; i + 1 < piece.size(); ++i) {
        ++counts[{static_cast<unsigned char>(piece[i]), static_cast<unsigned char>(piece[i + 1])}];
      }
    }
  }
  std::pair<unsigned char, unsigned char> best{};
  int best_count = 0;
  for (const auto& [pair, n] : counts) {  // map order = smaller left byte, then right
    if (n > best_count) {
      best = pair;
      best_count = n;
    }
  }
  return {best.first, best.second};
}

TEST(Train, FirstMergeMatchesBruteForceCount) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> letter(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    for (int i = 0; i < 40; ++i) text += (i % 7 == 6) ? ' ' : static_cast<char>('a' + letter(rng));
    const auto tok = TokenizerModel::train({text}, 261);
    ASSERT_EQ(tok.merges().size(), 1u) << text;
    EXPECT_EQ(tok.merges()[0], brute_force_first_merge({text})) << text;
  }
}

TEST(Train, TieBreaksOnSmallerLeftBytes) {
  const auto tok = TokenizerModel::train({"cdcd abab"}, 261);
  EXPECT_EQ(tok.merges()[0], std::make_pair(TokenId{'a'}, TokenId{'b'}));
}

TEST(Train, SpecialsAreNeverMerged) {
  const auto tok = TokenizerModel::train({"a\na\na\na\n"}, 300);
  const auto& sp = tok.special_ids();
  for (const auto& [l, r] : tok.merges()) {
    for (TokenId id : {l, r}) {
      EXPECT_NE(id, sp.newline);
      EXPECT_NE(id, sp.bos);
    }
  }
  std::set<TokenId> ids{sp.pad, sp.bos, sp.eos, sp.newline};
  EXPECT_EQ(ids.size(), 4u);
}

TEST(Codec, RoundTripExamples) {
  const auto tok = TokenizerModel::train(kCorpus, 400);
  const std::string s = "Solar flare \xE2\x86\x92 Sun.";
  EXPECT_EQ(tok.decode(tok.encode(s)), s);
  EXPECT_TRUE(tok.encode("").empty());
  const std::vector<TokenId> nl{tok.special_ids().newline};
  EXPECT_EQ(tok.decode(nl), "\n");
}

TEST(Codec, RoundTripRandomUtf8) {
  const auto tok = TokenizerModel::train(kCorpus, 400);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_utf8(rng, 40);
    ASSERT_EQ(tok.decode(tok.encode(s)), s);
  }
}

TEST(Codec, NewlineAlwaysUsesSpecial) {
  const auto tok = TokenizerModel::train(kCorpus, 400);
  const auto ids = tok.encode("a\nb\n");
  EXPECT_EQ(std::count(ids.begin(), ids.end(), tok.special_ids().newline), 2);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), TokenId{'\n'}), 0);
}

TEST(Codec, SpecialsDecodeToNothing) {
  const TokenizerModel tok;
  const std::vector<TokenId> ids{tok.special_ids().bos, 'h', 'i', tok.special_ids().eos, tok.special_ids().pad};
  EXPECT_EQ(tok.decode(ids), "hi");
}

TEST(Codec, OutOfRangeIdIsVocabularyError) {
  const auto tok = TokenizerModel::train(kCorpus, 300);
  const std::vector<TokenId> bad{static_cast<TokenId>(tok.vocab_size())};
  EXPECT_THROW(tok.decode(bad), VocabularyError);
  const std::vector<TokenId> negative{-1};
  EXPECT_THROW(tok.decode(negative), VocabularyError);
}

TEST(Codec, MergesShortenText) {
  const auto tok = TokenizerModel::train(kCorpus, 400);
  EXPECT_LT(tok.encode("Solar flares release energy.").size(), std::string("Solar flares release energy.").size());
}

TEST(Serialization, SaveLoadRoundTrip) {
  helioqa::testing::TempDir dir("tok");
  const auto tok = TokenizerModel::train(kCorpus, 350);
  tok.save(dir.path() / "tok.json");
  const auto back = TokenizerModel::load(dir.path() / "tok.json");
  EXPECT_EQ(back, tok);
  EXPECT_EQ(back.encode(kCorpus[1]), tok.encode(kCorpus[1]));
  const auto j = tok.to_json();
  EXPECT_TRUE(j.contains("version"));
  EXPECT_TRUE(j.contains("vocab"));
  EXPECT_TRUE(j.contains("merges"));
  EXPECT_TRUE(j.contains("special_ids"));
}

TEST(Serialization, RejectsForwardMergeReference) {
  auto j = TokenizerModel::train({"aaab"}, 261).to_json();
  j["merges"][0][0] = 400;
  EXPECT_THROW(TokenizerModel::from_json(j), IoError);
}

TEST(Chunking, SplitsIntoFullChunksAndRemainder) {
  std::vector<TokenId> ids(1200);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i % 300);
  const auto chunks = chunk_corpus(ids, 512, "doc");
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks[0].ids.size(), 512u);
  EXPECT_EQ(chunks[1].ids.size(), 512u);
  EXPECT_EQ(chunks[2].ids.size(), 176u);
  EXPECT_EQ(chunks[2].source_doc, "doc");
  std::vector<TokenId> joined;
  for (const auto& c : chunks) joined.insert(joined.end(), c.ids.begin(), c.ids.end());
  EXPECT_EQ(joined, ids);
}

TEST(Chunking, ExactMultipleAndEmpty) {
  EXPECT_EQ(chunk_corpus(std::vector<TokenId>(512, 1), 512).size(), 1u);
  EXPECT_TRUE(chunk_corpus(std::vector<TokenId>{}, 512).empty());
  EXPECT_THROW(chunk_corpus(std::vector<TokenId>{1, 2}, 1), ConfigError);
}

TEST(Chunking, DecodedChunksRebuildText) {
  const auto tok = TokenizerModel::train(kCorpus, 400);
  const auto ids = tok.encode(kCorpus[0] + "\n" + kCorpus[1]);
  std::string rebuilt;
  for (const auto& c : chunk_corpus(ids, 7)) rebuilt += tok.decode(c.ids);
  EXPECT_EQ(rebuilt, kCorpus[0] + "\n" + kCorpus[1]);
}

TEST(Pretokenize, PiecesCoverInput) {
  const std::string s = "Two  spaces\nand words";
  std::string joined;
  for (auto p : pretokenize(s)) joined += p;
  EXPECT_EQ(joined, s);
}

}  // namespace
}  // namespace helioqa::tokenize
