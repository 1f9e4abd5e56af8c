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

// Two-stage adapter training: domain-adaptive pretraining on corpus chunks,
// then QA fine-tuning that continues the same adapters. Both stages use
// AdamW with linear warmup and gradient accumulation, and emit a
// training_log.json compute record.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "helioqa/microlm.hpp"
#include "helioqa/qa.hpp"
#include "helioqa/tokenize.hpp"

namespace helioqa::trainer {

struct TrainConfig {
  double learning_rate = 2e-4;
  int warmup_steps = 100;
  int epochs = 3;
  int micro_batch = 1;
  int grad_accum = 8;
  int max_seq_len = 512;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Weight of the QA loss in the combined objective. Stages run one after
  // the other, so this is recorded for provenance and never applied.
  double lambda_qa = 1.0;
  std::uint64_t seed = 0;
  // When positive, run exactly this many optimizer steps, cycling epochs.
  long max_steps = 0;
  microlm::Precision precision = microlm::Precision::kFloat32;

  int effective_batch() const { return micro_batch * grad_accum; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class Stage { kDapt, kQa };
std::string_view stage_name(Stage s);

struct TrainingLog {
  long total_steps = 0;
  double wall_clock_seconds = 0.0;
  long peak_memory_bytes = 0;
  long token_estimate = 0;
  std::vector<std::pair<long, double>> loss_curve;
  Stage stage = Stage::kDapt;
  int max_seq_len = 0;
  int effective_batch = 0;
  std::vector<double> epoch_mean_loss;

  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

/// steps x max_seq_len x effective_batch.
long token_estimate(long total_steps, int max_seq_len, int effective_batch);

/// learning_rate * min(1, step / warmup_steps); constant afterwards.
double lr_at(const TrainConfig& config, long step);

/// First and second moments for one parameter tensor.
struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One decoupled-weight-decay Adam update of `params` in place:
///   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
///   p = p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
/// `step` starts at 1. Throws NumericError naming `tensor_name` and the step
/// when a gradient entry is not finite.
void adamw_step(std::span<double> params, std::span<const double> grads, Moments& moments,
                const TrainConfig& config, double lr, long step, const std::string& tensor_name);

/// AdamW over every adapter tensor of a model; no state exists for base
/// weights.
class AdamW {
 public:
  explicit AdamW(const microlm::ModelState& state);
  void step(microlm::ModelState& state, const microlm::Gradients& grads, const TrainConfig& config,
            double lr, long step);
  /// Keyed "<projection>.lora_a" / "<projection>.lora_b".
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  std::map<std::string, Moments> moments_;
};

/// One training sequence: inputs, next-token targets and the loss mask.
struct Example {
  std::vector<TokenId> ids;
  std::vector<TokenId> targets;
  std::vector<bool> loss_mask;
  std::string source;
};

struct TrainResult {
  microlm::ModelState state;
  TrainingLog log;
};

/// Called after every optimizer step with (step, total_steps, loss).
using ProgressFn = std::function<void(long, long, double)>;

/// Shared loop: seeded per-epoch shuffle, grad_accum micro-batches averaged
/// per optimizer step. Throws ConfigError on an empty example list.
TrainResult train_loop(microlm::ModelState state, const std::vector<Example>& examples,
                       const TrainConfig& config, Stage stage, const ProgressFn& progress = {});

/// Next-token examples from corpus chunks (full loss mask). Chunks shorter
/// than two tokens carry no target and are dropped.
std::vector<Example> dapt_examples(const std::vector<tokenize::TokenChunk>& chunks);

/// Per-document [BOS] text [EOS] token streams cut into windows of
/// max_seq_len + 1 ids, so full windows yield max_seq_len inputs.
/// `docs` holds (id, text).
std::vector<tokenize::TokenChunk> document_chunks(const std::vector<std::pair<std::string, std::string>>& docs,
                                                  const tokenize::TokenizerModel& tokenizer, int max_seq_len);

TrainResult run_dapt(microlm::ModelState state, const std::vector<tokenize::TokenChunk>& chunks,
                     const TrainConfig& config, const ProgressFn& progress = {});

/// "Q: {question}\nA: {answer}\n"
std::string render_qa(const QAPair& pair);
/// "Q: {question}\nA:" - the generation prompt.
std::string qa_prompt(std::string_view question);

/// Tokenizes the rendered pair as [BOS] prompt answer NEWLINE. The mask
/// selects positions whose target is an answer token or the terminating
/// newline. Over-long sequences lose answer tokens from the tail (warning);
/// a prompt longer than max_seq_len - 8 returns nullopt (warning with id).
/// Throws InputError for an empty question or answer.
std::optional<Example> format_qa(const QAPair& pair, const tokenize::TokenizerModel& tokenizer,
                                 int max_seq_len);

/// Prompt ids used both by format_qa and at generation time.
std::vector<TokenId> prompt_ids(const tokenize::TokenizerModel& tokenizer, std::string_view question);

TrainResult run_qa_finetune(microlm::ModelState state, const std::vector<QAPair>& pairs,
                            const tokenize::TokenizerModel& tokenizer, const TrainConfig& config,
                            const ProgressFn& progress = {});

nlohmann::json to_json(const TrainingLog& log);
TrainingLog training_log_from_json(const nlohmann::json& j);
void write_training_log(const TrainingLog& log, const std::filesystem::path& path);
TrainingLog read_training_log(const std::filesystem::path& path);

/// Process peak resident set size in bytes.
long peak_memory_bytes();

}  // namespace helioqa::trainer
