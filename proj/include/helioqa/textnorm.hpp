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

// Cleaning, keyword filtering and corpus statistics for extracted scientific
// text. The input boundary is UTF-8 text, one document per file; PDF
// extraction happens upstream.
//
// The literature crawl this targets (1,570 relevant papers from five venues,
// about 5,966 articles overall) cannot be rebuilt without its source PDFs;
// the bundled corpora are small hand-written stand-ins.

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace helioqa::textnorm {

enum class Category { kFlare, kCme, kSep };

std::string_view category_name(Category c);
/// Accepts "FLARE", "CME", "SEP". Throws InputError otherwise.
Category parse_category(std::string_view name);

using CategorySet = std::set<Category>;

/// "CME+FLARE" style key; categories sorted by name. Empty set -> "NONE".
std::string category_set_key(const CategorySet& s);

struct Document {
  std::string id;
  std::string raw_text;
  std::map<std::string, std::string> source_meta;
};

struct CleanedDocument {
  std::string id;
  std::string text;
  std::map<std::string, long> removed_counts;
  CategorySet categories;

  Document as_document() const { return {id, text, {}}; }
};

/// Names used as keys in CleanedDocument::removed_counts.
namespace rule {
inline constexpr std::string_view kReferences = "references";
inline constexpr std::string_view kCaptions = "captions";
inline constexpr std::string_view kHeaders = "headers";
inline constexpr std::string_view kPageNumbers = "page_numbers";
inline constexpr std::string_view kCitations = "citations";
inline constexpr std::string_view kUrls = "urls";
inline constexpr std::string_view kHyphenation = "hyphenation";
inline constexpr std::string_view kControlChars = "control_chars";
inline constexpr std::string_view kWhitespace = "whitespace";
}  // namespace rule

/// Applies the ordered cleaning rules:
///   1. truncate at the last "References"/"Bibliography" heading line
///   2. drop caption lines ("Fig. 3:", "Figure 2.", "Table 1:")
///   3. drop ALL-CAPS lines shorter than 60 characters and bare page numbers
///   4. strip bracketed numeric and parenthesized author-year citations
///   5. strip URL tokens
///   6. join end-of-line hyphenation
///   7. strip control characters (tab becomes a space, newline is kept)
///   8. NFKC normalization
///   9. collapse whitespace (single spaces, at most one blank line, trimmed)
/// The sequence is repeated until the text stops changing, so the result is
/// a fixed point (clean_document is idempotent by construction).
/// Throws InputError naming the document id when raw_text is not UTF-8.
CleanedDocument clean_document(const Document& doc);

/// True iff `text` is well-formed UTF-8.
bool is_valid_utf8(std::string_view text);

/// Replaces each ill-formed UTF-8 sequence with U+FFFD.
std::string repair_utf8(std::string_view text);

/// NFKC normalization through ICU. Input must be valid UTF-8.
std::string nfkc(std::string_view text);

using Lexicon = std::map<Category, std::vector<std::string>>;

/// Terms for FLARE, CME and SEP.
const Lexicon& default_lexicon();

struct FilterResult {
  bool accepted = false;
  CategorySet categories;
};

/// Case-insensitive whole-word matching; a trailing plural "s" on the text
/// side is accepted ("CMEs", "flares"). Throws ConfigError on an empty
/// lexicon.
FilterResult keyword_filter(const CleanedDocument& doc, const Lexicon& lexicon);

struct CorpusStats {
  std::map<std::string, long> term_freq;
  std::map<std::string, long> category_combos;  // keyed by category_set_key
  long doc_count = 0;
};

/// Standard English function words.
const std::set<std::string>& default_stopwords();

/// Lowercased alphabetic tokens of `text` (splits on every non-letter code
/// point).
std::vector<std::string> alpha_tokens(std::string_view text);

CorpusStats corpus_stats(const std::vector<CleanedDocument>& docs,
                         const std::set<std::string>& stopwords);

/// Commutative merge of count maps; used when documents are processed by
/// independent workers.
void merge_stats(CorpusStats& into, const CorpusStats& other);

nlohmann::json stats_to_json(const CorpusStats& s);

nlohmann::json filter_report_entry(const CleanedDocument& doc, const FilterResult& r);

/// Loads every *.txt file in `dir` (sorted by filename), id = filename stem.
std::vector<Document> load_corpus_dir(const std::filesystem::path& dir);

}  // namespace helioqa::textnorm
