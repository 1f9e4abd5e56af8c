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

// One JSON file configures every pipeline stage.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "helioqa/arbiter.hpp"
#include "helioqa/decoder.hpp"
#include "helioqa/microlm.hpp"
#include "helioqa/remote_judge.hpp"
#include "helioqa/trainer.hpp"

namespace helioqa {

struct PipelinePaths {
  std::filesystem::path corpus_dir;
  std::filesystem::path qa_train;
  std::filesystem::path qa_eval;
  std::filesystem::path workdir;
};

struct ArbiterSettings {
  arbiter::StrataCounts strata = arbiter::default_strata();
  int n_runs = 3;
  std::uint64_t seed = 0;
  int parallelism = 4;
  arbiter::TiePolicy tie_policy = arbiter::TiePolicy::kDenominatorOnly;
  std::string judge = "mock";  // "mock" | "remote"
  std::string judge_url;
  arbiter::RetryPolicy retry;
};

struct PipelineConfig {
  PipelinePaths paths;
  int tokenizer_vocab_size = 512;
  std::uint64_t seed = 0;  // model initialization
  microlm::ModelConfig model;
  trainer::TrainConfig train_dapt;
  trainer::TrainConfig train_qa;
  decoder::SamplerParams sampler;
  ArbiterSettings arbiter;
};

/// Keys: paths, tokenizer.vocab_size, seed, model, train, train_qa (fields
/// overriding train for the QA stage), sampler, arbiter. Relative paths are
/// resolved against `base_dir`. Throws ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& c);

}  // namespace helioqa
