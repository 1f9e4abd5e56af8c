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

#include "helioqa/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "helioqa/error.hpp"
#include "helioqa/textnorm.hpp"

namespace helioqa::decoder {

void SamplerParams::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (top_k < 0) throw ConfigError("top_k must be non-negative");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (!(repetition_penalty >= 1.0)) throw ConfigError("repetition_penalty must be at least 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
}

nlohmann::json to_json(const SamplerParams& p) {
  return {{"temperature", p.temperature},     {"top_k", p.top_k},
          {"top_p", p.top_p},                 {"repetition_penalty", p.repetition_penalty},
          {"max_new_tokens", p.max_new_tokens}, {"stop_on_newline", p.stop_on_newline},
          {"seed", p.seed},                   {"greedy", p.greedy}};
}

SamplerParams sampler_params_from_json(const nlohmann::json& j) {
  SamplerParams p;
  try {
    p.temperature = j.value("temperature", p.temperature);
    p.top_k = j.value("top_k", p.top_k);
    p.top_p = j.value("top_p", p.top_p);
    p.repetition_penalty = j.value("repetition_penalty", p.repetition_penalty);
    p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
    p.stop_on_newline = j.value("stop_on_newline", p.stop_on_newline);
    p.seed = j.value("seed", p.seed);
    p.greedy = j.value("greedy", p.greedy);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampler config: ") + e.what());
  }
  p.validate();
  return p;
}

std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kNewline:
      return "NEWLINE";
    case StopReason::kMaxTokens:
      return "MAX_TOKENS";
    case StopReason::kEos:
      return "EOS";
  }
  return "?";
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> penalized(std::span<const double> logits, std::span<const TokenId> history,
                              double penalty) {
  std::vector<double> z(logits.begin(), logits.end());
  for (double v : z) {
    if (!std::isfinite(v)) throw InputError("logits must be finite");
  }
  if (penalty == 1.0) return z;
  const std::set<TokenId> seen(history.begin(), history.end());
  for (TokenId id : seen) {
    if (id < 0 || static_cast<std::size_t>(id) >= z.size()) continue;
    double& v = z[static_cast<std::size_t>(id)];
    v = v > 0.0 ? v / penalty : v * penalty;
  }
  return z;
}

// Indices sorted by value descending, lower index first on ties.
std::vector<std::size_t> ranked(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return idx;
}

void softmax_in_place(std::vector<double>& z) {
  double mx = kNegInf;
  for (double v : z) mx = std::max(mx, v);
  if (mx == kNegInf) throw InvariantError("every token was eliminated during truncation");
  double sum = 0.0;
  for (double& v : z) {
    v = v == kNegInf ? 0.0 : std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace

std::vector<double> transform_logits(std::span<const double> logits, std::span<const TokenId> history,
                                     const SamplerParams& params) {
  if (logits.empty()) throw InputError("empty logits row");
  std::vector<double> z = penalized(logits, history, params.repetition_penalty);
  for (double& v : z) v /= params.temperature;

  if (params.top_k > 0 && static_cast<std::size_t>(params.top_k) < z.size()) {
    const auto order = ranked(z);
    for (std::size_t r = static_cast<std::size_t>(params.top_k); r < order.size(); ++r) z[order[r]] = kNegInf;
  }

  softmax_in_place(z);

  if (params.top_p < 1.0) {
    const auto order = ranked(z);
    double cumulative = 0.0;
    std::size_t keep = 0;
    while (keep < order.size() && z[order[keep]] > 0.0) {
      cumulative += z[order[keep]];
      ++keep;
      if (cumulative >= params.top_p - 1e-12) break;
    }
    if (keep == 0) throw InvariantError("nucleus truncation kept no token");
    for (std::size_t r = keep; r < order.size(); ++r) z[order[r]] = 0.0;
    const double mass = std::accumulate(z.begin(), z.end(), 0.0);
    for (double& v : z) v /= mass;
  }
  return z;
}

TokenId sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cumulative += probs[i];
    last = i;
    if (u < cumulative) return static_cast<TokenId>(i);
  }
  if (last == probs.size()) throw InvariantError("cannot sample from an all-zero distribution");
  return static_cast<TokenId>(last);  // rounding left u above the final cumulative sum
}

TokenId greedy_choice(std::span<const double> logits, std::span<const TokenId> history,
                      double repetition_penalty) {
  const auto z = penalized(logits, history, repetition_penalty);
  return static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
}

namespace {

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

GenerationResult generate_ids(const microlm::ModelState& state, const tokenize::TokenizerModel& tokenizer,
                              std::vector<TokenId> prompt, const SamplerParams& params,
                              bool apply_sentence_filter) {
  params.validate();
  const int window = state.config.max_seq_len;
  if (prompt.empty()) throw LengthError("empty prompt");
  if (static_cast<int>(prompt.size()) > window) {
    throw LengthError("prompt has " + std::to_string(prompt.size()) + " tokens; the model accepts " +
                      std::to_string(window));
  }
  const auto& sp = tokenizer.special_ids();
  Rng rng(params.seed);
  microlm::RunOptions opts;
  opts.mode = microlm::Mode::kEval;
  opts.precision = microlm::Precision::kFloat64;

  GenerationResult result;
  std::vector<TokenId> sequence = std::move(prompt);
  std::vector<TokenId> output;
  std::vector<double> row;
  while (result.tokens_emitted < params.max_new_tokens) {
    const std::size_t start = sequence.size() > static_cast<std::size_t>(window) ? sequence.size() - window : 0;
    const std::span<const TokenId> context(sequence.data() + start, sequence.size() - start);
    const auto logits = microlm::forward(state, context, opts);
    const auto last = logits.row(logits.rows() - 1);
    row.assign(last.data(), last.data() + last.size());

    const TokenId next = params.greedy ? greedy_choice(row, sequence, params.repetition_penalty)
                                       : sample_index(transform_logits(row, sequence, params), rng);
    ++result.tokens_emitted;
    // The raw byte token for '\n' never comes out of encode() but can still be sampled.
    const bool newline = next == sp.newline || next == static_cast<TokenId>('\n');
    if (newline && params.stop_on_newline) {
      result.stop_reason = StopReason::kNewline;
      break;
    }
    if (next == sp.eos) {
      result.stop_reason = StopReason::kEos;
      break;
    }
    sequence.push_back(next);
    output.push_back(next);
    result.stop_reason = StopReason::kMaxTokens;
  }

  // Byte-level tokens can end mid-character.
  result.raw_text = trim(textnorm::repair_utf8(tokenizer.decode(output)));
  if (apply_sentence_filter) {
    auto [filtered, dropped] = sentence_filter(result.raw_text);
    result.filtered_text = std::move(filtered);
    result.dropped_fragment = dropped;
  } else {
    result.filtered_text = result.raw_text;
  }
  return result;
}

GenerationResult generate(const microlm::ModelState& state, const tokenize::TokenizerModel& tokenizer,
                          std::string_view prompt, const SamplerParams& params, bool apply_sentence_filter) {
  std::vector<TokenId> ids{tokenizer.special_ids().bos};
  const auto body = tokenizer.encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  return generate_ids(state, tokenizer, std::move(ids), params, apply_sentence_filter);
}

namespace {

bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Length of a closing quote or bracket starting at text[i], or 0.
std::size_t closer_length(std::string_view text, std::size_t i) {
  static constexpr std::string_view kMultiByte[] = {"”", "’", "»"};
  const char c = text[i];
  if (c == '"' || c == '\'' || c == ')' || c == ']' || c == '}') return 1;
  for (auto m : kMultiByte) {
    if (text.substr(i, m.size()) == m) return m.size();
  }
  return 0;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool abbreviation_before(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && is_ascii_letter(text[b - 1])) --b;
  const std::string_view word = text.substr(b, dot - b);
  if (word.size() == 1) return true;
  return word == "Fig" || word == "Eq" || word == "Dr" || word == "vs";
}

}  // namespace

std::pair<std::string, bool> sentence_filter(std::string_view text) {
  std::size_t cut = 0;
  bool found = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (c == '.' && abbreviation_before(text, i)) continue;
    std::size_t end = i + 1;
    while (end < text.size()) {
      const std::size_t n = closer_length(text, end);
      if (n == 0) break;
      end += n;
    }
    if (end == text.size() || is_space(text[end])) {
      cut = end;
      found = true;
    }
  }
  if (!found) return {std::string(), true};
  const std::string_view rest = text.substr(cut);
  const bool dropped = std::any_of(rest.begin(), rest.end(), [](char ch) { return !is_space(ch); });
  return {std::string(text.substr(0, cut)), dropped};
}

}  // namespace helioqa::decoder
