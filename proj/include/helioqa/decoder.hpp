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

// Constrained sampling for answer generation: repetition penalty,
// temperature, top-k and nucleus truncation, a newline stop, a new-token cap
// and a complete-sentence filter.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "helioqa/microlm.hpp"
#include "helioqa/rng.hpp"
#include "helioqa/tokenize.hpp"

namespace helioqa::decoder {

struct SamplerParams {
  double temperature = 0.7;
  int top_k = 50;      // 0 disables
  double top_p = 0.9;  // 1 disables
  double repetition_penalty = 1.1;
  int max_new_tokens = 128;
  bool stop_on_newline = true;
  std::uint64_t seed = 0;
  // Argmax of the penalized logits instead of sampling.
  bool greedy = false;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

nlohmann::json to_json(const SamplerParams& p);
SamplerParams sampler_params_from_json(const nlohmann::json& j);

enum class StopReason { kNewline, kMaxTokens, kEos };
std::string_view stop_reason_name(StopReason r);

struct GenerationResult {
  std::string raw_text;
  std::string filtered_text;
  StopReason stop_reason = StopReason::kMaxTokens;
  int tokens_emitted = 0;
  bool dropped_fragment = false;
};

/// Probabilities after penalty -> temperature -> top-k -> top-p ->
/// renormalize. `history` holds prompt and emitted ids. Ties in top-k and
/// top-p go to the lower token id. Throws InvariantError if nothing
/// survives and InputError on non-finite logits.
std::vector<double> transform_logits(std::span<const double> logits, std::span<const TokenId> history,
                                     const SamplerParams& params);

/// Inverse-CDF draw from `probs` using one uniform01 variate.
TokenId sample_index(std::span<const double> probs, Rng& rng);

/// Argmax with repetition penalty applied, lower id on ties.
TokenId greedy_choice(std::span<const double> logits, std::span<const TokenId> history,
                      double repetition_penalty);

/// Generates from already-tokenized prompt ids. The context window slides
/// once prompt plus output reaches the model's max_seq_len. Throws
/// LengthError when the prompt alone exceeds it.
GenerationResult generate_ids(const microlm::ModelState& state, const tokenize::TokenizerModel& tokenizer,
                              std::vector<TokenId> prompt, const SamplerParams& params,
                              bool apply_sentence_filter = true);

/// [BOS] + encode(prompt), then generate_ids.
GenerationResult generate(const microlm::ModelState& state, const tokenize::TokenizerModel& tokenizer,
                          std::string_view prompt, const SamplerParams& params,
                          bool apply_sentence_filter = true);

/// Keeps text up to the last complete sentence. A sentence ends at . ! or ?
/// (optionally followed by closing quotes or brackets) before whitespace or
/// end of text; a period after a single letter or after Fig, Eq, Dr or vs
/// does not count. `dropped` is true when non-whitespace text was removed
/// or no sentence end exists (then the result is empty).
std::pair<std::string, bool> sentence_filter(std::string_view text);

}  // namespace helioqa::decoder
