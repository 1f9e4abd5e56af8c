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

#include "helioqa/textnorm.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <regex>
#include <sstream>

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"

namespace helioqa::textnorm {

namespace {

constexpr int kMaxPasses = 8;
constexpr std::size_t kHeaderMaxChars = 60;

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::regex& reference_heading_re() {
  static const std::regex re(
      R"(^\s*(?:(?:\d+|[IVXLC]+)\.?\s+)?(?:references|bibliography)\s*:?\s*$)",
      std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& caption_re() {
  static const std::regex re(R"(^\s*(?:figs?\.|figure|table)\s*[a-z]?\d+[a-z]?\s*[.:|)])",
                             std::regex::icase | std::regex::optimize);
  return re;
}

// Matches the whitespace in front of a citation too, so "energy [3], see"
// becomes "energy, see".
const std::regex& numeric_citation_re() {
  static const std::regex re(R"([ \t]*\[\s*\d+(?:\s*(?:,|-|–|—)\s*\d+)*\s*\])",
                             std::regex::optimize);
  return re;
}

const std::regex& author_year_citation_re() {
  static const std::string name = R"([A-Z][A-Za-z'\-]+)";
  static const std::string one =
      name + R"((?:\s+(?:et\s+al\.?|and|&)(?:\s+)" + name + R"()?)?,?\s+\d{4}[a-z]?)";
  static const std::regex re(R"([ \t]*\((?:see\s+)?)" + one + R"((?:\s*;\s*)" + one + R"()*\))",
                             std::regex::optimize);
  return re;
}

const std::regex& url_re() {
  static const std::regex re(R"([ \t]*(?:https?://|www\.)[^\s]*[^\s.,;:!?)\]}'"])",
                             std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& hyphenation_re() {
  static const std::regex re(R"(([A-Za-z])-\n[ \t]*([a-z]))", std::regex::optimize);
  return re;
}

// Counts and replaces matches of `re` in `text`.
long replace_count(std::string& text, const std::regex& re, const char* fmt) {
  long n = 0;
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), re);
  auto last = text.cbegin();
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(last, m[0].first);
    out += m.format(fmt);
    last = m[0].second;
    ++n;
  }
  if (n == 0) return 0;
  out.append(last, text.cend());
  text = std::move(out);
  return n;
}

bool is_all_caps_header(std::string_view line) {
  const std::string_view t = trim(line);
  if (t.empty()) return false;
  bool has_upper = false;
  std::size_t chars = 0;
  int32_t i = 0;
  const auto len = static_cast<int32_t>(t.size());
  while (i < len) {
    UChar32 c;
    U8_NEXT(t.data(), i, len, c);
    ++chars;
    if (c < 0) continue;
    if (u_islower(c)) return false;
    if (u_isupper(c)) has_upper = true;
  }
  return has_upper && chars < kHeaderMaxChars;
}

bool is_page_number(std::string_view line) {
  const std::string_view t = trim(line);
  return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
}

struct PassResult {
  std::string text;
  std::map<std::string, long> counts;
};

void bump(std::map<std::string, long>& counts, std::string_view key, long n) {
  if (n > 0) counts[std::string(key)] += n;
}

PassResult clean_pass(const std::string& input) {
  PassResult r;
  auto& counts = r.counts;

  // (1) reference section; earlier heading-only lines are dropped as headers
  std::vector<std::string> lines = split_lines(input);
  std::vector<std::size_t> heading_lines;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (std::regex_match(lines[i], reference_heading_re())) heading_lines.push_back(i);
  }
  if (!heading_lines.empty()) {
    const std::size_t cut = heading_lines.back();
    bump(counts, rule::kReferences, static_cast<long>(lines.size() - cut));
    lines.resize(cut);
    for (auto it = heading_lines.rbegin() + 1; it != heading_lines.rend(); ++it) {
      lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(*it));
      bump(counts, rule::kHeaders, 1);
    }
  }

  // (2) captions, (3) headers and page numbers
  std::vector<std::string> kept;
  kept.reserve(lines.size());
  for (auto& line : lines) {
    if (std::regex_search(line, caption_re())) {
      bump(counts, rule::kCaptions, 1);
    } else if (is_all_caps_header(line)) {
      bump(counts, rule::kHeaders, 1);
    } else if (is_page_number(line)) {
      bump(counts, rule::kPageNumbers, 1);
    } else {
      kept.push_back(std::move(line));
    }
  }
  std::string text = join_lines(kept);

  // (4) citations, (5) URLs, (6) hyphenation
  bump(counts, rule::kCitations, replace_count(text, numeric_citation_re(), ""));
  bump(counts, rule::kCitations, replace_count(text, author_year_citation_re(), ""));
  bump(counts, rule::kUrls, replace_count(text, url_re(), ""));
  bump(counts, rule::kHyphenation, replace_count(text, hyphenation_re(), "$1$2"));

  // (7) control characters, including the C1 block (U+0080..U+009F)
  std::string stripped;
  stripped.reserve(text.size());
  long controls = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '\n') {
      stripped += '\n';
    } else if (c == '\t') {
      stripped += ' ';
      ++controls;
    } else if (c < 0x20 || c == 0x7f) {
      ++controls;
    } else if (c == 0xc2 && i + 1 < text.size() &&
               static_cast<unsigned char>(text[i + 1]) >= 0x80 &&
               static_cast<unsigned char>(text[i + 1]) <= 0x9f) {
      ++controls;
      ++i;
    } else {
      stripped += static_cast<char>(c);
    }
  }
  bump(counts, rule::kControlChars, controls);

  // (8)
  text = nfkc(stripped);

  // (9) whitespace: trim lines, single spaces, at most one blank line
  std::vector<std::string> out_lines;
  long ws_removed = 0;
  for (const auto& line : split_lines(text)) {
    std::string collapsed;
    bool prev_space = true;  // drops leading spaces
    for (char c : line) {
      if (c == ' ' || c == '\r') {
        if (!prev_space) collapsed += ' ';
        prev_space = true;
      } else {
        collapsed += c;
        prev_space = false;
      }
    }
    if (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    ws_removed += static_cast<long>(line.size() - collapsed.size());
    out_lines.push_back(std::move(collapsed));
  }
  std::string result;
  int pending_blank = 0;
  bool started = false;
  for (const auto& line : out_lines) {
    if (line.empty()) {
      ++pending_blank;
      continue;
    }
    if (started) {
      result += pending_blank > 0 ? "\n\n" : "\n";
      ws_removed += std::max(0, pending_blank - 1);
    } else {
      ws_removed += pending_blank;
    }
    pending_blank = 0;
    result += line;
    started = true;
  }
  ws_removed += pending_blank;
  bump(counts, rule::kWhitespace, ws_removed);

  r.text = std::move(result);
  return r;
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::kFlare:
      return "FLARE";
    case Category::kCme:
      return "CME";
    case Category::kSep:
      return "SEP";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  if (name == "FLARE") return Category::kFlare;
  if (name == "CME") return Category::kCme;
  if (name == "SEP") return Category::kSep;
  throw InputError("unknown category '" + std::string(name) + "'");
}

std::string category_set_key(const CategorySet& s) {
  if (s.empty()) return "NONE";
  std::vector<std::string> names;
  for (auto c : s) names.emplace_back(category_name(c));
  std::sort(names.begin(), names.end());
  std::string key;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) key += '+';
    key += names[i];
  }
  return key;
}

bool is_valid_utf8(std::string_view text) {
  int32_t i = 0;
  const auto len = static_cast<int32_t>(text.size());
  while (i < len) {
    UChar32 c;
    U8_NEXT(text.data(), i, len, c);
    if (c < 0) return false;
  }
  return true;
}

std::string repair_utf8(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  int32_t i = 0;
  const auto len = static_cast<int32_t>(text.size());
  while (i < len) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(text.data(), i, len, c);
    if (c < 0) {
      out += "\xEF\xBF\xBD";
    } else {
      out.append(text.data() + start, static_cast<std::size_t>(i - start));
    }
  }
  return out;
}

std::string nfkc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status)) throw InvariantError("ICU NFKC normalizer unavailable");
  const icu::UnicodeString src =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  const icu::UnicodeString dst = norm->normalize(src, status);
  if (U_FAILURE(status)) throw InvariantError("NFKC normalization failed");
  std::string out;
  dst.toUTF8String(out);
  return out;
}

CleanedDocument clean_document(const Document& doc) {
  if (!is_valid_utf8(doc.raw_text)) {
    throw InputError("document '" + doc.id + "': raw text is not valid UTF-8");
  }
  CleanedDocument out;
  out.id = doc.id;
  std::string text = doc.raw_text;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    PassResult r = clean_pass(text);
    for (const auto& [k, v] : r.counts) out.removed_counts[k] += v;
    const bool stable = r.text == text;
    text = std::move(r.text);
    if (stable) break;
  }
  out.text = std::move(text);
  return out;
}

const Lexicon& default_lexicon() {
  static const Lexicon lex = {
      {Category::kFlare, {"solar flare", "flare"}},
      {Category::kCme, {"coronal mass ejection", "CME"}},
      {Category::kSep, {"solar energetic particle", "SEP"}},
  };
  return lex;
}

namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

std::string fold_for_matching(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool prev_space = false;
  for (char c : text) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
      if (!prev_space) out += ' ';
      prev_space = true;
    } else {
      out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
      prev_space = false;
    }
  }
  return out;
}

bool contains_word(const std::string& hay, const std::string& term) {
  if (term.empty()) return false;
  std::size_t pos = 0;
  while ((pos = hay.find(term, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    std::size_t end = pos + term.size();
    if (end < hay.size() && hay[end] == 's') ++end;
    const bool right_ok = end >= hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

}  // namespace

FilterResult keyword_filter(const CleanedDocument& doc, const Lexicon& lexicon) {
  bool any_term = false;
  for (const auto& [cat, terms] : lexicon) any_term = any_term || !terms.empty();
  if (!any_term) throw ConfigError("keyword lexicon is empty");

  const std::string hay = fold_for_matching(doc.text);
  FilterResult r;
  for (const auto& [cat, terms] : lexicon) {
    for (const auto& term : terms) {
      if (contains_word(hay, fold_for_matching(term))) {
        r.categories.insert(cat);
        break;
      }
    }
  }
  r.accepted = !r.categories.empty();
  return r;
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",       "about",   "above",  "after",  "again",   "against", "all",    "also",
      "am",      "an",      "and",    "any",    "are",     "as",      "at",     "be",
      "because", "been",    "before", "being",  "below",   "between", "both",   "but",
      "by",      "can",     "could",  "did",    "do",      "does",    "doing",  "down",
      "during",  "each",    "et",     "al",     "few",     "for",     "from",   "further",
      "had",     "has",     "have",   "having", "he",      "her",     "here",   "hers",
      "him",     "his",     "how",    "i",      "if",      "in",      "into",   "is",
      "it",      "its",     "itself", "just",   "may",     "me",      "more",   "most",
      "my",      "no",      "nor",    "not",    "now",     "of",      "off",    "on",
      "once",    "only",    "or",     "other",  "our",     "ours",    "out",    "over",
      "own",     "same",    "she",    "should", "so",      "some",    "such",   "than",
      "that",    "the",     "their",  "theirs", "them",    "then",    "there",  "these",
      "they",    "this",    "those",  "through", "to",     "too",     "under",  "until",
      "up",      "very",    "was",    "we",     "were",    "what",    "when",   "where",
      "which",   "while",   "who",    "whom",   "why",     "will",    "with",   "would",
      "you",     "your",    "yours",  "however", "thus",   "within",  "without", "via",
  };
  return words;
}

std::vector<std::string> alpha_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  int32_t i = 0;
  const auto len = static_cast<int32_t>(text.size());
  while (i < len) {
    UChar32 c;
    U8_NEXT(text.data(), i, len, c);
    if (c >= 0 && u_isalpha(c)) {
      const UChar32 lower = u_tolower(c);
      char buf[U8_MAX_LENGTH];
      int32_t n = 0;
      UBool err = false;
      U8_APPEND(buf, n, U8_MAX_LENGTH, lower, err);
      if (err) continue;
      cur.append(buf, static_cast<std::size_t>(n));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

CorpusStats corpus_stats(const std::vector<CleanedDocument>& docs,
                         const std::set<std::string>& stopwords) {
  CorpusStats s;
  for (const auto& d : docs) {
    ++s.doc_count;
    for (auto& t : alpha_tokens(d.text)) {
      if (!stopwords.contains(t)) ++s.term_freq[t];
    }
    if (!d.categories.empty()) ++s.category_combos[category_set_key(d.categories)];
  }
  return s;
}

void merge_stats(CorpusStats& into, const CorpusStats& other) {
  for (const auto& [k, v] : other.term_freq) into.term_freq[k] += v;
  for (const auto& [k, v] : other.category_combos) into.category_combos[k] += v;
  into.doc_count += other.doc_count;
}

nlohmann::json stats_to_json(const CorpusStats& s) {
  nlohmann::json j;
  j["doc_count"] = s.doc_count;
  j["term_freq"] = nlohmann::json::object();
  for (const auto& [k, v] : s.term_freq) j["term_freq"][k] = v;
  j["category_combos"] = nlohmann::json::object();
  for (const auto& [k, v] : s.category_combos) j["category_combos"][k] = v;
  return j;
}

nlohmann::json filter_report_entry(const CleanedDocument& doc, const FilterResult& r) {
  nlohmann::json j;
  j["id"] = doc.id;
  j["accepted"] = r.accepted;
  auto cats = nlohmann::json::array();
  for (auto c : r.categories) cats.push_back(std::string(category_name(c)));
  j["categories"] = cats;
  j["removed_counts"] = nlohmann::json::object();
  for (const auto& [k, v] : doc.removed_counts) j["removed_counts"][k] = v;
  return j;
}

std::vector<Document> load_corpus_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  for (const auto& p : files) docs.push_back({p.stem().string(), read_file(p), {}});
  return docs;
}

}  // namespace helioqa::textnorm
