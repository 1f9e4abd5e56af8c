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

#include "helioqa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>
#include <sys/resource.h>

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"
#include "helioqa/rng.hpp"

namespace helioqa::trainer {

using microlm::ModelState;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (micro_batch <= 0 || grad_accum <= 0) throw ConfigError("micro_batch and grad_accum must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"epochs", c.epochs},
          {"micro_batch", c.micro_batch},
          {"grad_accum", c.grad_accum},
          {"max_seq_len", c.max_seq_len},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"lambda_qa", c.lambda_qa},
          {"seed", c.seed},
          {"max_steps", c.max_steps},
          {"precision", c.precision == microlm::Precision::kFloat32 ? "float32" : "float64"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.grad_accum = j.value("grad_accum", c.grad_accum);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.lambda_qa = j.value("lambda_qa", c.lambda_qa);
    c.seed = j.value("seed", c.seed);
    c.max_steps = j.value("max_steps", c.max_steps);
    const std::string precision = j.value("precision", std::string("float32"));
    if (precision == "float32") {
      c.precision = microlm::Precision::kFloat32;
    } else if (precision == "float64") {
      c.precision = microlm::Precision::kFloat64;
    } else {
      throw ConfigError("precision must be float32 or float64");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view stage_name(Stage s) { return s == Stage::kDapt ? "DAPT" : "QA"; }

long token_estimate(long total_steps, int max_seq_len, int effective_batch) {
  return total_steps * static_cast<long>(max_seq_len) * effective_batch;
}

double lr_at(const TrainConfig& config, long step) {
  if (config.warmup_steps <= 0) return config.learning_rate;
  const double frac = static_cast<double>(step) / config.warmup_steps;
  return config.learning_rate * std::min(1.0, frac);
}

void adamw_step(std::span<double> params, std::span<const double> grads, Moments& moments,
                const TrainConfig& config, double lr, long step, const std::string& tensor_name) {
  if (params.size() != grads.size()) {
    throw DimensionError("gradient size mismatch for " + tensor_name);
  }
  if (step < 1) throw InvariantError("AdamW step index must start at 1");
  for (double g : grads) {
    if (!std::isfinite(g)) {
      throw NumericError("non-finite gradient in " + tensor_name + " at step " + std::to_string(step));
    }
  }
  if (moments.m.empty() && moments.v.empty()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
  }
  if (moments.m.size() != params.size() || moments.v.size() != params.size()) {
    throw DimensionError("moment size mismatch for " + tensor_name);
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    const double p = params[i];
    params[i] = p - lr * m_hat / (std::sqrt(v_hat) + config.adam_eps) - lr * config.weight_decay * p;
  }
}

AdamW::AdamW(const ModelState& state) {
  for (const auto& [name, ad] : state.adapters) {
    const auto zeros = [](std::size_t n) { return Moments{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; };
    moments_[name + ".lora_a"] = zeros(ad.a.data.size());
    moments_[name + ".lora_b"] = zeros(ad.b.data.size());
  }
}

void AdamW::step(ModelState& state, const microlm::Gradients& grads, const TrainConfig& config,
                 double lr, long step) {
  for (auto& [name, ad] : state.adapters) {
    const auto& g = grads.adapters.at(name);
    adamw_step(ad.a.data, g.a.data, moments_.at(name + ".lora_a"), config, lr, step, name + ".lora_a");
    adamw_step(ad.b.data, g.b.data, moments_.at(name + ".lora_b"), config, lr, step, name + ".lora_b");
  }
}

namespace {

void accumulate(microlm::Gradients& into, const microlm::Gradients& g) {
  if (into.adapters.empty()) {
    into = g;
    return;
  }
  for (auto& [name, ad] : into.adapters) {
    const auto& src = g.adapters.at(name);
    for (std::size_t i = 0; i < ad.a.data.size(); ++i) ad.a.data[i] += src.a.data[i];
    for (std::size_t i = 0; i < ad.b.data.size(); ++i) ad.b.data[i] += src.b.data[i];
  }
}

void scale(microlm::Gradients& g, double s) {
  for (auto& [name, ad] : g.adapters) {
    for (double& v : ad.a.data) v *= s;
    for (double& v : ad.b.data) v *= s;
  }
}

// Example indices in training order: one seeded permutation per epoch.
class ExampleStream {
 public:
  ExampleStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

  // Returns (index, epoch).
  std::pair<std::size_t, int> next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return {order_[pos_++], epoch_};
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)));
    for (std::size_t i = n_; i > 1; --i) {
      std::swap(order_[i - 1], order_[uniform_index(rng, i)]);
    }
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  int epoch_ = 0;
};

}  // namespace

TrainResult train_loop(ModelState state, const std::vector<Example>& examples, const TrainConfig& config,
                       Stage stage, const ProgressFn& progress) {
  config.validate();
  if (examples.empty()) throw ConfigError("no training examples");
  if (state.adapters.empty()) throw StateError("model has no adapters to train");
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.ids.size()) > state.config.max_seq_len) {
      throw ConfigError("training example longer than the model's max_seq_len (" +
                        std::to_string(ex.ids.size()) + " > " + std::to_string(state.config.max_seq_len) + ")");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const long n = static_cast<long>(examples.size());
  const long eb = config.effective_batch();
  const long total_examples = config.max_steps > 0 ? config.max_steps * eb : config.epochs * n;
  const long total_steps = (total_examples + eb - 1) / eb;

  TrainingLog log;
  log.stage = stage;
  log.max_seq_len = config.max_seq_len;
  log.effective_batch = static_cast<int>(eb);

  AdamW optimizer(state);
  ExampleStream stream(examples.size(), config.seed);
  std::vector<double> epoch_sum;
  std::vector<long> epoch_count;
  long consumed = 0;

  for (long step = 1; step <= total_steps; ++step) {
    microlm::Gradients grads;
    double loss_sum = 0.0;
    long micro_batches = 0;
    for (int accum = 0; accum < config.grad_accum && consumed < total_examples; ++accum) {
      microlm::Gradients micro;
      double micro_loss = 0.0;
      int in_micro = 0;
      for (int b = 0; b < config.micro_batch && consumed < total_examples; ++b, ++consumed) {
        const auto [idx, epoch] = stream.next();
        const Example& ex = examples[idx];
        microlm::RunOptions opts;
        opts.mode = microlm::Mode::kTrain;
        opts.precision = config.precision;
        opts.dropout_seed = mix_seed(mix_seed(state.rng_seed, config.seed), static_cast<std::uint64_t>(consumed));
        auto lg = microlm::backward(state, ex.ids, ex.targets, ex.loss_mask, opts);
        if (!std::isfinite(lg.loss)) {
          throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        accumulate(micro, lg.grads);
        micro_loss += lg.loss;
        ++in_micro;
        if (static_cast<std::size_t>(epoch) >= epoch_sum.size()) {
          epoch_sum.resize(static_cast<std::size_t>(epoch) + 1, 0.0);
          epoch_count.resize(static_cast<std::size_t>(epoch) + 1, 0);
        }
        epoch_sum[static_cast<std::size_t>(epoch)] += lg.loss;
        ++epoch_count[static_cast<std::size_t>(epoch)];
      }
      scale(micro, 1.0 / in_micro);
      accumulate(grads, micro);
      loss_sum += micro_loss / in_micro;
      ++micro_batches;
    }
    scale(grads, 1.0 / static_cast<double>(micro_batches));
    const double step_loss = loss_sum / static_cast<double>(micro_batches);
    optimizer.step(state, grads, config, lr_at(config, step), step);
    log.loss_curve.emplace_back(step, step_loss);
    if (progress) progress(step, total_steps, step_loss);
  }

  for (std::size_t e = 0; e < epoch_sum.size(); ++e) {
    log.epoch_mean_loss.push_back(epoch_sum[e] / static_cast<double>(epoch_count[e]));
  }
  log.total_steps = total_steps;
  log.token_estimate = token_estimate(total_steps, config.max_seq_len, static_cast<int>(eb));
  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log.peak_memory_bytes = peak_memory_bytes();
  return {std::move(state), std::move(log)};
}

std::vector<Example> dapt_examples(const std::vector<tokenize::TokenChunk>& chunks) {
  std::vector<Example> out;
  for (const auto& c : chunks) {
    if (c.ids.size() < 2) continue;
    Example ex;
    ex.ids.assign(c.ids.begin(), c.ids.end() - 1);
    ex.targets.assign(c.ids.begin() + 1, c.ids.end());
    ex.loss_mask.assign(ex.ids.size(), true);
    ex.source = c.source_doc;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<tokenize::TokenChunk> document_chunks(const std::vector<std::pair<std::string, std::string>>& docs,
                                                  const tokenize::TokenizerModel& tokenizer, int max_seq_len) {
  std::vector<tokenize::TokenChunk> chunks;
  for (const auto& [id, text] : docs) {
    std::vector<TokenId> ids{tokenizer.special_ids().bos};
    const auto body = tokenizer.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(tokenizer.special_ids().eos);
    for (auto& c : tokenize::chunk_corpus(ids, max_seq_len + 1, id)) chunks.push_back(std::move(c));
  }
  return chunks;
}

TrainResult run_dapt(ModelState state, const std::vector<tokenize::TokenChunk>& chunks,
                     const TrainConfig& config, const ProgressFn& progress) {
  if (chunks.empty()) throw ConfigError("DAPT needs at least one corpus chunk");
  auto examples = dapt_examples(chunks);
  if (examples.empty()) throw ConfigError("every DAPT chunk is shorter than two tokens");
  return train_loop(std::move(state), examples, config, Stage::kDapt, progress);
}

namespace {

std::string single_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

std::string render_qa(const QAPair& pair) {
  return "Q: " + single_line(pair.question) + "\nA: " + single_line(pair.answer) + "\n";
}

std::string qa_prompt(std::string_view question) {
  return "Q: " + single_line(std::string(question)) + "\nA:";
}

std::vector<TokenId> prompt_ids(const tokenize::TokenizerModel& tokenizer, std::string_view question) {
  std::vector<TokenId> ids{tokenizer.special_ids().bos};
  const auto body = tokenizer.encode(qa_prompt(question));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

std::optional<Example> format_qa(const QAPair& pair, const tokenize::TokenizerModel& tokenizer,
                                 int max_seq_len) {
  validate(pair);
  const auto prompt = prompt_ids(tokenizer, pair.question);
  if (static_cast<int>(prompt.size()) > max_seq_len - 8) {
    spdlog::warn("skipping QA item '{}': question uses {} tokens (limit {})", pair.id, prompt.size(),
                 max_seq_len - 8);
    return std::nullopt;
  }
  std::vector<TokenId> all = prompt;
  const auto answer = tokenizer.encode(" " + single_line(pair.answer));
  all.insert(all.end(), answer.begin(), answer.end());
  all.push_back(tokenizer.special_ids().newline);
  const auto limit = static_cast<std::size_t>(max_seq_len) + 1;
  if (all.size() > limit) {
    spdlog::warn("truncating answer of QA item '{}' from {} to {} tokens", pair.id, all.size() - 1,
                 max_seq_len);
    all.resize(limit);
  }
  Example ex;
  ex.source = pair.id;
  ex.ids.assign(all.begin(), all.end() - 1);
  ex.targets.assign(all.begin() + 1, all.end());
  ex.loss_mask.resize(ex.ids.size());
  for (std::size_t t = 0; t < ex.ids.size(); ++t) ex.loss_mask[t] = t + 1 >= prompt.size();
  return ex;
}

TrainResult run_qa_finetune(ModelState state, const std::vector<QAPair>& pairs,
                            const tokenize::TokenizerModel& tokenizer, const TrainConfig& config,
                            const ProgressFn& progress) {
  std::vector<Example> examples;
  const int limit = std::min(config.max_seq_len, state.config.max_seq_len);
  for (const auto& p : pairs) {
    if (auto ex = format_qa(p, tokenizer, limit)) examples.push_back(std::move(*ex));
  }
  if (examples.empty()) throw ConfigError("no usable QA pairs for fine-tuning");
  return train_loop(std::move(state), examples, config, Stage::kQa, progress);
}

nlohmann::json to_json(const TrainingLog& log) {
  auto curve = nlohmann::json::array();
  for (const auto& [step, loss] : log.loss_curve) curve.push_back({step, loss});
  return {{"total_steps", log.total_steps},
          {"wall_clock_seconds", log.wall_clock_seconds},
          {"peak_memory_bytes", log.peak_memory_bytes},
          {"token_estimate", log.token_estimate},
          {"stage", std::string(stage_name(log.stage))},
          {"max_seq_len", log.max_seq_len},
          {"effective_batch", log.effective_batch},
          {"epoch_mean_loss", log.epoch_mean_loss},
          {"loss_curve", curve}};
}

TrainingLog training_log_from_json(const nlohmann::json& j) {
  TrainingLog log;
  try {
    log.total_steps = j.at("total_steps").get<long>();
    log.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    log.peak_memory_bytes = j.at("peak_memory_bytes").get<long>();
    log.token_estimate = j.at("token_estimate").get<long>();
    const auto stage = j.at("stage").get<std::string>();
    if (stage == "DAPT") {
      log.stage = Stage::kDapt;
    } else if (stage == "QA") {
      log.stage = Stage::kQa;
    } else {
      throw IoError("unknown stage '" + stage + "'");
    }
    log.max_seq_len = j.value("max_seq_len", 0);
    log.effective_batch = j.value("effective_batch", 0);
    log.epoch_mean_loss = j.value("epoch_mean_loss", std::vector<double>{});
    for (const auto& point : j.at("loss_curve")) {
      log.loss_curve.emplace_back(point.at(0).get<long>(), point.at(1).get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed training log: ") + e.what());
  }
  return log;
}

void write_training_log(const TrainingLog& log, const std::filesystem::path& path) {
  write_json_atomic(path, to_json(log));
}

TrainingLog read_training_log(const std::filesystem::path& path) {
  return training_log_from_json(read_json(path));
}

long peak_memory_bytes() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) return 0;
  return static_cast<long>(usage.ru_maxrss) * 1024;  // ru_maxrss is in KiB on Linux
}

}  // namespace helioqa::trainer
