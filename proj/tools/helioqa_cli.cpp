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

// helioqa: command-line driver for the cleaning, tokenizer, training,
// decoding and evaluation stages.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "helioqa/arbiter.hpp"
#include "helioqa/checkpoint.hpp"
#include "helioqa/decoder.hpp"
#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"
#include "helioqa/pipeline.hpp"
#include "helioqa/qa.hpp"
#include "helioqa/remote_judge.hpp"
#include "helioqa/textnorm.hpp"
#include "helioqa/tokenize.hpp"
#include "helioqa/trainer.hpp"

namespace fs = std::filesystem;
using namespace helioqa;

namespace {

struct Layout {
  fs::path root;
  fs::path cleaned() const { return root / "cleaned"; }
  fs::path clean_report() const { return root / "clean_report.json"; }
  fs::path filtered() const { return root / "filtered"; }
  fs::path filter_report() const { return root / "filter_report.json"; }
  fs::path stats() const { return root / "stats.json"; }
  fs::path tokenizer() const { return root / "tokenizer.json"; }
  fs::path dapt() const { return root / "dapt"; }
  fs::path qa() const { return root / "qa"; }
  fs::path answers() const { return root / "answers.jsonl"; }
  fs::path eval() const { return root / "eval"; }
  fs::path report() const { return root / "report"; }
};

void require_artifact(const fs::path& p, std::string_view producer) {
  if (!fs::exists(p)) {
    throw StateError("missing artifact " + p.string() + " (produced by `helioqa " + std::string(producer) + "`)");
  }
}

void require_input(const fs::path& p, std::string_view what) {
  if (p.empty()) throw ConfigError(std::string(what) + " is not set in the config");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " does not exist: " + p.string());
}

std::vector<textnorm::Document> load_text_dir(const fs::path& dir, std::string_view producer) {
  require_artifact(dir, producer);
  return textnorm::load_corpus_dir(dir);
}

void write_text_dir(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& docs) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  for (const auto& [id, text] : docs) write_file_atomic(tmp / (id + ".txt"), text);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

std::vector<textnorm::CleanedDocument> as_cleaned(const std::vector<textnorm::Document>& docs) {
  std::vector<textnorm::CleanedDocument> out;
  for (const auto& d : docs) out.push_back({d.id, d.raw_text, {}, {}});
  return out;
}

arbiter::EvalSet eval_set_for(const PipelineConfig& cfg) {
  require_input(cfg.paths.qa_eval, "paths.qa_eval");
  return arbiter::build_eval_set(load_qa_jsonl(cfg.paths.qa_eval), cfg.arbiter.strata, cfg.arbiter.seed);
}

microlm::ModelState fresh_model(const PipelineConfig& cfg, const tokenize::TokenizerModel& tok) {
  auto mc = cfg.model;
  if (mc.vocab_size != tok.vocab_size()) {
    spdlog::info("model vocab_size set to the tokenizer's {} (config had {})", tok.vocab_size(), mc.vocab_size);
    mc.vocab_size = tok.vocab_size();
  }
  return microlm::init_model(mc, cfg.seed);
}

trainer::ProgressFn progress_logger() {
  return [](long step, long total, double loss) {
    if (step == 1 || step == total || step % 50 == 0) spdlog::info("step {}/{} loss {:.4f}", step, total, loss);
  };
}

void save_training_outputs(const trainer::TrainResult& r, const fs::path& out_dir) {
  const auto ckpt = out_dir / "checkpoint.bin";
  const auto log = out_dir / "training_log.json";
  microlm::save_checkpoint(r.state, ckpt);
  trainer::write_training_log(r.log, log);
  microlm::load_checkpoint(ckpt);
  trainer::read_training_log(log);
  std::cout << "wrote " << ckpt.string() << " and " << log.string() << " (" << r.log.total_steps
            << " steps, token_estimate " << r.log.token_estimate << ")\n";
}

std::map<std::string, std::string> load_answers(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("answers file does not exist: " + p.string());
  return load_answers_jsonl(p);
}

nlohmann::json generation_json(const decoder::GenerationResult& g) {
  return {{"raw_text", g.raw_text},
          {"filtered_text", g.filtered_text},
          {"stop_reason", std::string(decoder::stop_reason_name(g.stop_reason))},
          {"tokens_emitted", g.tokens_emitted},
          {"dropped_fragment", g.dropped_fragment}};
}

const std::vector<std::pair<std::string, std::string>>& ablation_variants() {
  static const std::vector<std::pair<std::string, std::string>> v = {
      {"base", "Base"}, {"dapt_only", "DAPT-only"}, {"qa_only", "QA-only"}, {"full", "Full"}};
  return v;
}

fs::path ablation_report_path(const fs::path& dir, const std::string& key) {
  const auto nested = dir / key / "report.json";
  if (fs::exists(nested)) return nested;
  const auto flat = dir / (key + ".json");
  if (fs::exists(flat)) return flat;
  throw ConfigError("ablation report for '" + key + "' not found: expected " + nested.string() + " or " +
                    flat.string());
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("helioqa");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"helioqa: heliophysics QA pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::string workdir_override;
  bool quiet = false;
  app.add_option("--config", config_path, "pipeline JSON config")->required();
  app.add_option("--workdir", workdir_override, "override paths.workdir");
  app.add_flag("--quiet", quiet, "only log warnings and errors");

  auto* clean = app.add_subcommand("clean", "clean every corpus document");
  auto* filter = app.add_subcommand("filter", "keep documents that mention a flare, CME or SEP term");
  auto* stats = app.add_subcommand("stats", "term frequencies and category co-occurrence of the filtered corpus");

  auto* tok_train = app.add_subcommand("tok-train", "train the BPE tokenizer on the filtered corpus");
  int vocab_override = 0;
  tok_train->add_option("--vocab-size", vocab_override, "override tokenizer.vocab_size");

  auto* train_dapt = app.add_subcommand("train-dapt", "domain-adaptive pretraining of the adapters");
  std::string dapt_out;
  long dapt_steps = -1;
  train_dapt->add_option("--out", dapt_out, "output directory (default <workdir>/dapt)");
  train_dapt->add_option("--max-steps", dapt_steps, "override train.max_steps");

  auto* train_qa = app.add_subcommand("train-qa", "QA fine-tuning of the adapters");
  std::string qa_init, qa_out;
  long qa_steps = -1;
  bool qa_from_base = false;
  train_qa->add_option("--init-checkpoint", qa_init, "starting checkpoint (default <workdir>/dapt/checkpoint.bin)");
  train_qa->add_flag("--from-base", qa_from_base, "start from a freshly initialized model instead");
  train_qa->add_option("--out", qa_out, "output directory (default <workdir>/qa)");
  train_qa->add_option("--max-steps", qa_steps, "override train_qa.max_steps");

  // Shared decoding options for generate, chat and answer-batch.
  std::string checkpoint, tokenizer_path;
  bool untrained = false, no_filter = false;
  std::optional<double> temperature, top_p, rep_penalty;
  std::optional<int> top_k, max_new;
  std::optional<std::uint64_t> seed;
  bool greedy = false;
  auto add_decoding = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "model checkpoint (default <workdir>/qa/checkpoint.bin)");
    sub->add_option("--tokenizer", tokenizer_path, "tokenizer JSON (default <workdir>/tokenizer.json)");
    sub->add_flag("--untrained", untrained, "use a freshly initialized model (the Base variant)");
    sub->add_option("--temperature", temperature);
    sub->add_option("--top-k", top_k);
    sub->add_option("--top-p", top_p);
    sub->add_option("--rep-penalty", rep_penalty);
    sub->add_option("--max-new-tokens", max_new);
    sub->add_option("--seed", seed);
    sub->add_flag("--greedy", greedy, "argmax decoding");
    sub->add_flag("--no-sentence-filter", no_filter, "keep trailing sentence fragments");
  };

  auto* generate = app.add_subcommand("generate", "answer one question");
  std::string question;
  bool as_json = false;
  generate->add_option("--question", question, "question text")->required();
  generate->add_flag("--json", as_json, "print the full generation record as JSON");
  add_decoding(generate);

  auto* chat = app.add_subcommand("chat", "answer questions read line by line from standard input");
  add_decoding(chat);

  auto* answer_batch = app.add_subcommand("answer-batch", "answer every evaluation item");
  std::string answers_out;
  answer_batch->add_option("--out", answers_out, "answers JSONL (default <workdir>/answers.jsonl)");
  add_decoding(answer_batch);

  auto* eval = app.add_subcommand("eval", "pairwise judge evaluation of two answer files");
  std::string candidate_path, baseline_path, judge_kind, judge_url, eval_out, eval_name = "Candidate";
  std::optional<int> runs, parallelism;
  eval->add_option("--candidate", candidate_path, "candidate answers JSONL")->required();
  eval->add_option("--baseline", baseline_path, "baseline answers JSONL")->required();
  eval->add_option("--judge", judge_kind, "mock | remote (default from config)")
      ->check(CLI::IsMember({"mock", "remote"}));
  eval->add_option("--judge-url", judge_url, "remote judge endpoint");
  eval->add_option("--runs", runs, "override arbiter.n_runs");
  eval->add_option("--parallelism", parallelism, "override arbiter.parallelism");
  eval->add_option("--name", eval_name, "variant name for the CSV row");
  eval->add_option("--out", eval_out, "output directory (default <workdir>/eval)");

  auto* report = app.add_subcommand("report", "win-rate comparison and ablation table from report files");
  std::vector<std::string> report_inputs;
  std::string ablation_dir, report_out;
  report->add_option("--input", report_inputs, "NAME=PATH to a report.json (repeatable)");
  report->add_option("--ablation", ablation_dir, "directory holding base, dapt_only, qa_only and full reports");
  report->add_option("--out", report_out, "output directory (default <workdir>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    PipelineConfig cfg = load_pipeline_config(config_path);
    if (!workdir_override.empty()) cfg.paths.workdir = workdir_override;
    if (cfg.paths.workdir.empty()) throw ConfigError("paths.workdir is not set");
    fs::create_directories(cfg.paths.workdir);
    write_json_atomic(cfg.paths.workdir / "config.echo.json", to_json(cfg));
    const Layout out{cfg.paths.workdir};

    auto sampler_params = [&] {
      auto p = cfg.sampler;
      if (temperature) p.temperature = *temperature;
      if (top_k) p.top_k = *top_k;
      if (top_p) p.top_p = *top_p;
      if (rep_penalty) p.repetition_penalty = *rep_penalty;
      if (max_new) p.max_new_tokens = *max_new;
      if (seed) p.seed = *seed;
      if (greedy) p.greedy = true;
      p.validate();
      return p;
    };
    auto load_tokenizer = [&] {
      const fs::path p = tokenizer_path.empty() ? out.tokenizer() : fs::path(tokenizer_path);
      require_artifact(p, "tok-train");
      return tokenize::TokenizerModel::load(p);
    };
    auto load_model = [&](const tokenize::TokenizerModel& tok) {
      if (untrained) return fresh_model(cfg, tok);
      const fs::path p = checkpoint.empty() ? out.qa() / "checkpoint.bin" : fs::path(checkpoint);
      require_artifact(p, "train-qa");
      auto state = microlm::load_checkpoint(p);
      if (state.config.vocab_size != tok.vocab_size()) {
        throw ConfigError("checkpoint vocabulary (" + std::to_string(state.config.vocab_size) +
                          ") does not match the tokenizer (" + std::to_string(tok.vocab_size()) + ")");
      }
      return state;
    };

    if (*clean) {
      require_input(cfg.paths.corpus_dir, "paths.corpus_dir");
      std::vector<std::pair<std::string, std::string>> texts;
      nlohmann::json rep = nlohmann::json::array();
      for (const auto& doc : textnorm::load_corpus_dir(cfg.paths.corpus_dir)) {
        const auto c = textnorm::clean_document(doc);
        texts.emplace_back(c.id, c.text);
        rep.push_back({{"id", c.id}, {"removed_counts", c.removed_counts}});
      }
      write_text_dir(out.cleaned(), texts);
      write_json_atomic(out.clean_report(), rep);
      std::cout << "cleaned " << texts.size() << " documents into " << out.cleaned().string() << "\n";
    } else if (*filter) {
      auto docs = as_cleaned(load_text_dir(out.cleaned(), "clean"));
      if (fs::exists(out.clean_report())) {
        std::map<std::string, std::map<std::string, long>> counts;
        for (const auto& e : read_json(out.clean_report())) {
          counts[e.at("id").get<std::string>()] = e.at("removed_counts").get<std::map<std::string, long>>();
        }
        for (auto& d : docs) d.removed_counts = counts[d.id];
      }
      std::vector<std::pair<std::string, std::string>> kept;
      nlohmann::json rep = nlohmann::json::array();
      for (auto& d : docs) {
        const auto r = textnorm::keyword_filter(d, textnorm::default_lexicon());
        rep.push_back(textnorm::filter_report_entry(d, r));
        if (r.accepted) kept.emplace_back(d.id, d.text);
      }
      write_text_dir(out.filtered(), kept);
      write_json_atomic(out.filter_report(), rep);
      std::cout << "kept " << kept.size() << " of " << docs.size() << " documents\n";
    } else if (*stats) {
      auto docs = as_cleaned(load_text_dir(out.filtered(), "filter"));
      for (auto& d : docs) d.categories = textnorm::keyword_filter(d, textnorm::default_lexicon()).categories;
      const auto s = textnorm::corpus_stats(docs, textnorm::default_stopwords());
      write_json_atomic(out.stats(), textnorm::stats_to_json(s));
      std::cout << "wrote " << out.stats().string() << " (" << s.doc_count << " documents)\n";
    } else if (*tok_train) {
      const auto docs = load_text_dir(out.filtered(), "filter");
      if (docs.empty()) throw InputError("the filtered corpus is empty");
      std::vector<std::string> texts;
      for (const auto& d : docs) texts.push_back(d.raw_text);
      const int vocab = vocab_override > 0 ? vocab_override : cfg.tokenizer_vocab_size;
      const auto tok = tokenize::TokenizerModel::train(texts, vocab);
      tok.save(out.tokenizer());
      tokenize::TokenizerModel::load(out.tokenizer());
      std::cout << "wrote " << out.tokenizer().string() << " (" << tok.vocab_size() << " tokens)\n";
    } else if (*train_dapt) {
      const auto tok = load_tokenizer();
      const auto docs = load_text_dir(out.filtered(), "filter");
      auto tc = cfg.train_dapt;
      if (dapt_steps >= 0) tc.max_steps = dapt_steps;
      auto state = fresh_model(cfg, tok);
      if (tc.max_seq_len > state.config.max_seq_len) {
        throw ConfigError("train.max_seq_len exceeds model.max_seq_len");
      }
      std::vector<std::pair<std::string, std::string>> texts;
      for (const auto& d : docs) texts.emplace_back(d.id, d.raw_text);
      const auto chunks = trainer::document_chunks(texts, tok, tc.max_seq_len);
      const auto r = trainer::run_dapt(std::move(state), chunks, tc, progress_logger());
      save_training_outputs(r, dapt_out.empty() ? out.dapt() : fs::path(dapt_out));
    } else if (*train_qa) {
      const auto tok = load_tokenizer();
      require_input(cfg.paths.qa_train, "paths.qa_train");
      auto tc = cfg.train_qa;
      if (qa_steps >= 0) tc.max_steps = qa_steps;
      microlm::ModelState state;
      if (qa_from_base) {
        state = fresh_model(cfg, tok);
      } else {
        const fs::path p = qa_init.empty() ? out.dapt() / "checkpoint.bin" : fs::path(qa_init);
        require_artifact(p, "train-dapt");
        state = microlm::load_checkpoint(p);
      }
      if (tc.max_seq_len > state.config.max_seq_len) {
        throw ConfigError("train_qa.max_seq_len exceeds model.max_seq_len");
      }
      const auto pairs = load_qa_jsonl(cfg.paths.qa_train);
      const auto r = trainer::run_qa_finetune(std::move(state), pairs, tok, tc, progress_logger());
      save_training_outputs(r, qa_out.empty() ? out.qa() : fs::path(qa_out));
    } else if (*generate) {
      const auto tok = load_tokenizer();
      const auto state = load_model(tok);
      const auto g = decoder::generate_ids(state, tok, trainer::prompt_ids(tok, question), sampler_params(),
                                           !no_filter);
      if (as_json) {
        std::cout << generation_json(g).dump() << "\n";
      } else {
        std::cout << g.filtered_text << "\n";
      }
    } else if (*chat) {
      const auto tok = load_tokenizer();
      const auto state = load_model(tok);
      auto params = sampler_params();
      const auto base_seed = params.seed;
      std::string line;
      for (std::uint64_t n = 0; std::getline(std::cin, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        params.seed = mix_seed(base_seed, n);
        const auto g = decoder::generate_ids(state, tok, trainer::prompt_ids(tok, line), params, !no_filter);
        std::cout << g.filtered_text << std::endl;
      }
    } else if (*answer_batch) {
      const auto tok = load_tokenizer();
      const auto state = load_model(tok);
      const auto set = eval_set_for(cfg);
      auto params = sampler_params();
      const auto base_seed = params.seed;
      std::vector<std::pair<std::string, std::string>> answers;
      for (const auto& item : set.items) {
        params.seed = mix_seed(base_seed, stable_hash(item.id));
        const auto g =
            decoder::generate_ids(state, tok, trainer::prompt_ids(tok, item.question), params, !no_filter);
        answers.emplace_back(item.id, g.filtered_text);
      }
      const fs::path path = answers_out.empty() ? out.answers() : fs::path(answers_out);
      save_answers_jsonl(path, answers);
      load_answers_jsonl(path);
      std::cout << "wrote " << answers.size() << " answers to " << path.string() << "\n";
    } else if (*eval) {
      const auto set = eval_set_for(cfg);
      const auto candidate = load_answers(candidate_path);
      const auto baseline = load_answers(baseline_path);
      arbiter::EvalOptions opts;
      opts.n_runs = runs.value_or(cfg.arbiter.n_runs);
      opts.seed = cfg.arbiter.seed;
      opts.parallelism = parallelism.value_or(cfg.arbiter.parallelism);
      opts.tie_policy = cfg.arbiter.tie_policy;
      const std::string kind = judge_kind.empty() ? cfg.arbiter.judge : judge_kind;
      std::unique_ptr<arbiter::Judge> judge;
      if (kind == "mock") {
        judge = std::make_unique<arbiter::MockJudge>(set);
      } else {
        const std::string url = judge_url.empty() ? cfg.arbiter.judge_url : judge_url;
        if (url.empty()) throw ConfigError("remote judge needs --judge-url or arbiter.judge_url");
        judge = std::make_unique<arbiter::RemoteJudge>(url, cfg.arbiter.retry);
      }
      const auto result = arbiter::run_evaluation(set, candidate, baseline, *judge, opts);
      const fs::path dir = eval_out.empty() ? out.eval() : fs::path(eval_out);
      write_json_atomic(dir / "report.json", arbiter::to_json(result.report));
      arbiter::write_ledger(result.ledger, dir / "ledger.jsonl");
      write_file_atomic(dir / "report.csv", std::string(arbiter::kTableHeader) + "\n" +
                                                arbiter::table_row(eval_name, result.report) + "\n");
      arbiter::win_rate_report_from_json(read_json(dir / "report.json"));
      std::cout << arbiter::table_row(eval_name, result.report) << " (" << result.report.n_items << " items, "
                << result.report.n_runs << " runs, " << result.report.failed << " failed)\n";
    } else if (*report) {
      if (report_inputs.empty() && ablation_dir.empty()) {
        throw ConfigError("report needs --input NAME=PATH or --ablation DIR");
      }
      std::vector<std::pair<std::string, arbiter::WinRateReport>> rows;
      for (const auto& arg : report_inputs) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
          throw ConfigError("--input expects NAME=PATH, got '" + arg + "'");
        }
        const fs::path p = arg.substr(eq + 1);
        if (!fs::exists(p)) throw ConfigError("report file does not exist: " + p.string());
        rows.emplace_back(arg.substr(0, eq), arbiter::win_rate_report_from_json(read_json(p)));
      }
      const fs::path dir = report_out.empty() ? out.report() : fs::path(report_out);
      if (!ablation_dir.empty()) {
        std::string table = std::string(arbiter::kTableHeader) + "\n";
        for (const auto& [key, label] : ablation_variants()) {
          const auto r = arbiter::win_rate_report_from_json(read_json(ablation_report_path(ablation_dir, key)));
          table += arbiter::table_row(label, r) + "\n";
          rows.emplace_back(label, r);
        }
        write_file_atomic(dir / "ablation.csv", table);
        std::cout << table;
      }
      nlohmann::json bars = nlohmann::json::array();
      std::string csv = "Model,Win Rate (%),Std (%)\n";
      for (const auto& [name, r] : rows) {
        bars.push_back({{"model", name}, {"mean", r.mean}, {"std", r.std}, {"per_run_rates", r.per_run_rates}});
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%.1f,%.1f\n", 100.0 * r.mean, 100.0 * r.std);
        csv += name + buf;
      }
      write_json_atomic(dir / "winrates.json", bars);
      write_file_atomic(dir / "winrates.csv", csv);
      if (ablation_dir.empty()) std::cout << csv;
    }
  } catch (const helioqa::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 0;
}
