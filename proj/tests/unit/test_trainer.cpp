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

#include <cmath>
#include <fstream>
#include <limits>

#include "helioqa/error.hpp"
#include "helioqa/microlm.hpp"
#include "helioqa/textnorm.hpp"
#include "helioqa/tokenize.hpp"
#include "helioqa/trainer.hpp"
#include "test_util.hpp"

namespace helioqa::trainer {
namespace {

using helioqa::testing::TempDir;
using microlm::ModelState;

microlm::ModelConfig byte_model(int d_model, int max_seq_len) {
  auto c = helioqa::testing::tiny_config();
  c.vocab_size = tokenize::kMinVocabSize;
  c.d_model = d_model;
  c.d_ff = 2 * d_model;
  c.max_seq_len = max_seq_len;
  c.lora_rank = 4;
  c.lora_alpha = 8.0;
  return c;
}

TrainConfig fast_config(int seq) {
  TrainConfig c;
  c.learning_rate = 5e-3;
  c.warmup_steps = 2;
  c.max_seq_len = seq;
  c.seed = 3;
  return c;
}

// Small corpus chunks from the bundled toy documents, byte-level tokens.
std::vector<tokenize::TokenChunk> toy_chunks(int seq) {
  tokenize::TokenizerModel tok;
  std::vector<tokenize::TokenChunk> chunks;
  for (const auto& doc : textnorm::load_corpus_dir(helioqa::testing::data_dir() / "corpus")) {
    const auto ids = tok.encode(textnorm::clean_document(doc).text);
    for (auto& c : tokenize::chunk_corpus(ids, seq + 1, doc.id)) chunks.push_back(std::move(c));
  }
  return chunks;
}

TEST(Config, DefaultsAndEffectiveBatch) {
  TrainConfig c;
  EXPECT_EQ(c.effective_batch(), 8);
  EXPECT_DOUBLE_EQ(c.learning_rate, 2e-4);
  EXPECT_EQ(c.warmup_steps, 100);
  EXPECT_EQ(c.epochs, 3);
  EXPECT_NO_THROW(c.validate());
  c.grad_accum = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.max_steps = 17;
  c.seed = 99;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Schedule, LinearWarmupThenConstant) {
  TrainConfig c;
  EXPECT_EQ(lr_at(c, 0), 0.0);
  EXPECT_NEAR(lr_at(c, 50), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at(c, 100), 2e-4, 1e-18);
  EXPECT_NEAR(lr_at(c, 5000), 2e-4, 1e-18);
  EXPECT_NEAR(lr_at(c, 1), 2e-6, 1e-18);
}

TEST(AdamWStep, ZeroGradientNoDecayLeavesParams) {
  TrainConfig c;
  c.weight_decay = 0.0;
  std::vector<double> p{0.5, -1.25, 3.0};
  const auto before = p;
  std::vector<double> g(3, 0.0);
  Moments m;
  adamw_step(p, g, m, c, 0.1, 1, "t");
  EXPECT_EQ(p, before);
}

TEST(AdamWStep, DecoupledDecay) {
  TrainConfig c;
  c.weight_decay = 0.01;
  std::vector<double> p{2.0, -4.0};
  std::vector<double> g(2, 0.0);
  Moments m;
  adamw_step(p, g, m, c, 0.1, 1, "t");
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1 - 0.001));
  EXPECT_DOUBLE_EQ(p[1], -4.0 * (1 - 0.001));
}

TEST(AdamWStep, FirstBiasCorrectedStep) {
  TrainConfig c;
  c.weight_decay = 0.0;
  std::vector<double> p{0.0};
  std::vector<double> g{1.0};
  Moments m;
  adamw_step(p, g, m, c, c.learning_rate, 1, "t");
  EXPECT_NEAR(p[0], -1.99999998e-4, 1e-13);
  EXPECT_NEAR(p[0], -2e-4 / (1 + 1e-8), 1e-18);
  ASSERT_EQ(m.m.size(), 1u);
  EXPECT_NEAR(m.m[0], 0.1, 1e-15);
  EXPECT_NEAR(m.v[0], 0.001, 1e-15);
}

TEST(AdamWStep, NonFiniteGradientNamesTensorAndStep) {
  TrainConfig c;
  std::vector<double> p{0.0, 0.0};
  std::vector<double> g{1.0, std::numeric_limits<double>::quiet_NaN()};
  Moments m;
  try {
    adamw_step(p, g, m, c, 1e-3, 7, "layers.0.attn.wv.lora_b");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("layers.0.attn.wv.lora_b"), std::string::npos);
    EXPECT_NE(what.find('7'), std::string::npos);
  }
  g[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adamw_step(p, g, m, c, 1e-3, 1, "t"), NumericError);
}

TEST(AdamWOptimizer, MomentsMirrorAdapterShapes) {
  const auto s = microlm::init_model(helioqa::testing::tiny_config(), 1);
  AdamW opt(s);
  EXPECT_EQ(opt.moments().size(), 2 * s.adapters.size());
  for (const auto& [name, ad] : s.adapters) {
    EXPECT_EQ(opt.moments().at(name + ".lora_a").m.size(), ad.a.data.size());
    EXPECT_EQ(opt.moments().at(name + ".lora_b").v.size(), ad.b.data.size());
  }
  for (const auto& [key, mom] : opt.moments()) {
    EXPECT_TRUE(key.ends_with(".lora_a") || key.ends_with(".lora_b")) << key;
  }
}

TEST(TokenEstimate, Formula) {
  EXPECT_EQ(token_estimate(100, 512, 8), 409600);
  EXPECT_EQ(token_estimate(0, 512, 8), 0);
}

TEST(Dapt, TotalStepsAndFrozenBase) {
  const auto chunks = toy_chunks(16);
  auto state = microlm::init_model(byte_model(16, 16), 5);
  const auto base_before = state.base;
  auto cfg = fast_config(16);
  cfg.epochs = 1;
  const auto r = run_dapt(state, chunks, cfg);
  const long expected = (static_cast<long>(chunks.size()) + 7) / 8;
  EXPECT_EQ(r.log.total_steps, expected);
  EXPECT_EQ(r.log.token_estimate, expected * 16 * 8);
  EXPECT_EQ(r.log.stage, Stage::kDapt);
  EXPECT_EQ(r.state.base, base_before);
  EXPECT_NE(r.state.adapters, state.adapters);
  ASSERT_EQ(r.log.loss_curve.size(), static_cast<std::size_t>(expected));
  for (std::size_t i = 1; i < r.log.loss_curve.size(); ++i) {
    EXPECT_LT(r.log.loss_curve[i - 1].first, r.log.loss_curve[i].first);
  }
}

TEST(Dapt, DeterministicAcrossRuns) {
  const auto chunks = toy_chunks(16);
  const auto state = microlm::init_model(byte_model(16, 16), 5);
  auto cfg = fast_config(16);
  cfg.max_steps = 4;
  const auto a = run_dapt(state, chunks, cfg);
  const auto b = run_dapt(state, chunks, cfg);
  EXPECT_EQ(a.state.adapters, b.state.adapters);
  EXPECT_EQ(a.log.loss_curve, b.log.loss_curve);
  cfg.seed = 4;
  const auto c = run_dapt(state, chunks, cfg);
  EXPECT_NE(a.state.adapters, c.state.adapters);
}

TEST(Dapt, EpochThreeMeanBelowEpochOne) {
  const auto chunks = toy_chunks(32);
  const auto state = microlm::init_model(byte_model(32, 32), 5);
  const auto r = run_dapt(state, chunks, fast_config(32));
  ASSERT_EQ(r.log.epoch_mean_loss.size(), 3u);
  EXPECT_LT(r.log.epoch_mean_loss[2], r.log.epoch_mean_loss[0]);
}

TEST(Dapt, MaxStepsOverridesEpochs) {
  const auto chunks = toy_chunks(16);
  auto cfg = fast_config(16);
  cfg.max_steps = 3;
  const auto r = run_dapt(microlm::init_model(byte_model(16, 16), 5), chunks, cfg);
  EXPECT_EQ(r.log.total_steps, 3);
}

TEST(Dapt, Errors) {
  const auto state = microlm::init_model(byte_model(16, 16), 5);
  EXPECT_THROW(run_dapt(state, {}, fast_config(16)), ConfigError);
  auto merged = microlm::merge_adapters(state);
  EXPECT_THROW(run_dapt(merged, toy_chunks(16), fast_config(16)), StateError);
  EXPECT_THROW(run_dapt(state, toy_chunks(32), fast_config(32)), ConfigError);
}

TEST(DocumentChunks, FramesEachDocument) {
  tokenize::TokenizerModel tok;
  const auto chunks = document_chunks({{"a", std::string(20, 'x')}, {"b", "yz"}}, tok, 8);
  // 22 ids for "a" in windows of 9; "b" fits in one.
  ASSERT_EQ(chunks.size(), 4u);
  EXPECT_EQ(chunks[0].ids.size(), 9u);
  EXPECT_EQ(chunks[0].ids.front(), tok.special_ids().bos);
  EXPECT_EQ(chunks[2].ids.size(), 4u);
  EXPECT_EQ(chunks[2].ids.back(), tok.special_ids().eos);
  EXPECT_EQ(chunks[2].source_doc, "a");
  EXPECT_EQ(chunks[3].ids, (std::vector<TokenId>{tok.special_ids().bos, 'y', 'z', tok.special_ids().eos}));
  EXPECT_EQ(chunks[3].source_doc, "b");
}

TEST(FormatQa, RendersTemplate) {
  const QAPair p{"x", "What is a flare?", "A burst of energy.", std::nullopt};
  EXPECT_EQ(render_qa(p), "Q: What is a flare?\nA: A burst of energy.\n");
  EXPECT_EQ(qa_prompt("What is a flare?"), "Q: What is a flare?\nA:");
}

TEST(FormatQa, MaskCoversAnswerAndTerminator) {
  tokenize::TokenizerModel tok;
  const QAPair p{"x", "What is a flare?", "A burst of energy.", std::nullopt};
  const auto ex = format_qa(p, tok, 512);
  ASSERT_TRUE(ex.has_value());
  const auto answer_tokens = tok.encode(" A burst of energy.").size() + 1;
  const auto masked = static_cast<std::size_t>(std::count(ex->loss_mask.begin(), ex->loss_mask.end(), true));
  EXPECT_EQ(masked, answer_tokens);
  EXPECT_EQ(ex->targets.back(), tok.special_ids().newline);
  EXPECT_EQ(ex->ids.front(), tok.special_ids().bos);
  // Masked positions are exactly the trailing ones.
  for (std::size_t t = 0; t < ex->loss_mask.size(); ++t) {
    EXPECT_EQ(ex->loss_mask[t], t >= ex->loss_mask.size() - answer_tokens);
  }
  // Inputs plus the final target reproduce the rendered text.
  auto all = ex->ids;
  all.push_back(ex->targets.back());
  EXPECT_EQ(tok.decode(all), render_qa(p));
}

TEST(FormatQa, EmptyAnswerRejected) {
  tokenize::TokenizerModel tok;
  EXPECT_THROW(format_qa(QAPair{"x", "Why?", "", std::nullopt}, tok, 64), InputError);
  EXPECT_THROW(format_qa(QAPair{"x", "", "Because.", std::nullopt}, tok, 64), InputError);
}

TEST(FormatQa, LongQuestionSkippedLongAnswerTruncated) {
  tokenize::TokenizerModel tok;
  EXPECT_FALSE(format_qa(QAPair{"long", std::string(40, 'q'), "a.", std::nullopt}, tok, 40).has_value());
  const auto ex = format_qa(QAPair{"x", "Why?", std::string(100, 'a'), std::nullopt}, tok, 32);
  ASSERT_TRUE(ex.has_value());
  EXPECT_EQ(ex->ids.size(), 32u);
  EXPECT_NE(ex->targets.back(), tok.special_ids().newline);
}

TEST(QaFinetune, MaskedLossMatchesExplicitNll) {
  tokenize::TokenizerModel tok;
  auto state = microlm::init_model(byte_model(16, 64), 8);
  helioqa::testing::randomize_b(state, 2);
  const QAPair p{"x", "What drives the wind?", "Coronal heating.", std::nullopt};
  const auto ex = format_qa(p, tok, 64);
  ASSERT_TRUE(ex.has_value());
  std::vector<bool> explicit_mask(ex->ids.size(), false);
  const auto n_answer = tok.encode(" Coronal heating.").size() + 1;
  for (std::size_t t = ex->ids.size() - n_answer; t < ex->ids.size(); ++t) explicit_mask[t] = true;
  const microlm::RunOptions eval{microlm::Mode::kEval, microlm::Precision::kFloat64, 0};
  const auto r = microlm::backward(state, ex->ids, ex->targets, ex->loss_mask, eval);
  const double expected = microlm::nll_loss(microlm::forward(state, ex->ids, eval), ex->targets, explicit_mask);
  EXPECT_NEAR(r.loss, expected, 1e-12);
}

TEST(QaFinetune, ContinuesSameAdaptersAndLogsQa) {
  tokenize::TokenizerModel tok;
  const auto state = microlm::init_model(byte_model(16, 64), 8);
  std::vector<QAPair> pairs{{"a", "What is a flare?", "A burst.", std::nullopt},
                            {"b", "What is a CME?", "Ejected plasma.", std::nullopt}};
  auto cfg = fast_config(64);
  cfg.max_steps = 2;
  const auto r = run_qa_finetune(state, pairs, tok, cfg);
  EXPECT_EQ(r.log.stage, Stage::kQa);
  EXPECT_EQ(r.state.base, state.base);
  EXPECT_EQ(r.state.adapters.size(), state.adapters.size());
  for (const auto& [name, ad] : state.adapters) EXPECT_TRUE(r.state.adapters.count(name));
  EXPECT_EQ(r.log.token_estimate, 2L * 64 * 8);
}

TEST(Log, RoundTripAndKeys) {
  TempDir dir("log");
  TrainingLog log;
  log.total_steps = 100;
  log.wall_clock_seconds = 1.5;
  log.peak_memory_bytes = 1234;
  log.max_seq_len = 512;
  log.effective_batch = 8;
  log.token_estimate = token_estimate(100, 512, 8);
  log.loss_curve = {{1, 5.0}, {2, 4.5}};
  log.stage = Stage::kQa;
  log.epoch_mean_loss = {4.75};
  write_training_log(log, dir.path() / "training_log.json");
  EXPECT_EQ(read_training_log(dir.path() / "training_log.json"), log);
  std::ifstream in(dir.path() / "training_log.json");
  const auto j = nlohmann::json::parse(in);
  for (const char* key : {"total_steps", "wall_clock_seconds", "peak_memory_bytes", "token_estimate", "stage",
                          "loss_curve"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["stage"], "QA");
  EXPECT_EQ(j["token_estimate"], 409600);
}

TEST(Log, UnwritablePathIsIoError) {
  TrainingLog log;
  EXPECT_THROW(write_training_log(log, "/proc/helioqa/none/training_log.json"), IoError);
}

TEST(Log, PeakMemoryIsPositive) { EXPECT_GT(peak_memory_bytes(), 0); }

}  // namespace
}  // namespace helioqa::trainer
