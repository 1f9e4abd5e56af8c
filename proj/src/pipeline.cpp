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

#include "helioqa/pipeline.hpp"

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"

namespace helioqa {

namespace {

std::filesystem::path resolve(const nlohmann::json& paths, const char* key, const std::filesystem::path& base) {
  if (!paths.contains(key)) return {};
  std::filesystem::path p = paths.at(key).get<std::string>();
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

const char* tie_policy_name(arbiter::TiePolicy p) {
  return p == arbiter::TiePolicy::kHalfWin ? "half" : "denominator";
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  try {
    const auto paths = j.value("paths", nlohmann::json::object());
    c.paths.corpus_dir = resolve(paths, "corpus_dir", base_dir);
    c.paths.qa_train = resolve(paths, "qa_train", base_dir);
    c.paths.qa_eval = resolve(paths, "qa_eval", base_dir);
    c.paths.workdir = resolve(paths, "workdir", base_dir);
    c.tokenizer_vocab_size = j.value("tokenizer", nlohmann::json::object()).value("vocab_size", c.tokenizer_vocab_size);
    c.seed = j.value("seed", c.seed);
    c.model = microlm::model_config_from_json(j.value("model", nlohmann::json::object()));

    const auto train = j.value("train", nlohmann::json::object());
    c.train_dapt = trainer::train_config_from_json(train);
    auto qa = train;
    qa.update(j.value("train_qa", nlohmann::json::object()));
    c.train_qa = trainer::train_config_from_json(qa);

    c.sampler = decoder::sampler_params_from_json(j.value("sampler", nlohmann::json::object()));

    const auto arb = j.value("arbiter", nlohmann::json::object());
    if (arb.contains("strata")) {
      c.arbiter.strata.clear();
      for (const auto& [name, count] : arb.at("strata").items()) {
        c.arbiter.strata[parse_difficulty(name)] = count.get<int>();
      }
    }
    c.arbiter.n_runs = arb.value("n_runs", c.arbiter.n_runs);
    c.arbiter.seed = arb.value("seed", c.arbiter.seed);
    c.arbiter.parallelism = arb.value("parallelism", c.arbiter.parallelism);
    const auto ties = arb.value("tie_policy", std::string("denominator"));
    if (ties == "denominator") {
      c.arbiter.tie_policy = arbiter::TiePolicy::kDenominatorOnly;
    } else if (ties == "half") {
      c.arbiter.tie_policy = arbiter::TiePolicy::kHalfWin;
    } else {
      throw ConfigError("arbiter.tie_policy must be \"denominator\" or \"half\"");
    }
    c.arbiter.judge = arb.value("judge", c.arbiter.judge);
    c.arbiter.judge_url = arb.value("judge_url", c.arbiter.judge_url);
    c.arbiter.retry.max_attempts = arb.value("max_attempts", c.arbiter.retry.max_attempts);
    c.arbiter.retry.base_delay_seconds = arb.value("base_delay_seconds", c.arbiter.retry.base_delay_seconds);
    c.arbiter.retry.timeout_seconds = arb.value("timeout_seconds", c.arbiter.retry.timeout_seconds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  if (c.arbiter.judge != "mock" && c.arbiter.judge != "remote") {
    throw ConfigError("arbiter.judge must be \"mock\" or \"remote\"");
  }
  if (c.arbiter.n_runs < 1 || c.arbiter.parallelism < 1) {
    throw ConfigError("arbiter.n_runs and arbiter.parallelism must be positive");
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json strata = nlohmann::json::object();
  for (const auto& [d, n] : c.arbiter.strata) strata[std::string(difficulty_name(d))] = n;
  return {{"paths",
           {{"corpus_dir", c.paths.corpus_dir.string()},
            {"qa_train", c.paths.qa_train.string()},
            {"qa_eval", c.paths.qa_eval.string()},
            {"workdir", c.paths.workdir.string()}}},
          {"tokenizer", {{"vocab_size", c.tokenizer_vocab_size}}},
          {"seed", c.seed},
          {"model", microlm::to_json(c.model)},
          {"train", trainer::to_json(c.train_dapt)},
          {"train_qa", trainer::to_json(c.train_qa)},
          {"sampler", decoder::to_json(c.sampler)},
          {"arbiter",
           {{"strata", strata},
            {"n_runs", c.arbiter.n_runs},
            {"seed", c.arbiter.seed},
            {"parallelism", c.arbiter.parallelism},
            {"tie_policy", tie_policy_name(c.arbiter.tie_policy)},
            {"judge", c.arbiter.judge},
            {"judge_url", c.arbiter.judge_url},
            {"max_attempts", c.arbiter.retry.max_attempts},
            {"base_delay_seconds", c.arbiter.retry.base_delay_seconds},
            {"timeout_seconds", c.arbiter.retry.timeout_seconds}}}};
}

}  // namespace helioqa
