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

#include "helioqa/arbiter.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <set>
#include <thread>

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"
#include "helioqa/textnorm.hpp"

namespace helioqa::arbiter {

namespace {

constexpr Difficulty kDifficulties[] = {Difficulty::kEasy, Difficulty::kMedium, Difficulty::kHard};

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

StrataCounts default_strata() {
  return {{Difficulty::kEasy, 100}, {Difficulty::kMedium, 150}, {Difficulty::kHard, 50}};
}

EvalSet build_eval_set(const std::vector<QAPair>& pool, const StrataCounts& strata, std::uint64_t seed) {
  std::set<std::string> ids;
  std::map<Difficulty, std::vector<std::size_t>> by_difficulty;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& item = pool[i];
    if (!ids.insert(item.id).second) throw InputError("duplicate QA id '" + item.id + "' in evaluation pool");
    if (!item.difficulty) throw InputError("evaluation item '" + item.id + "' has no difficulty");
    by_difficulty[*item.difficulty].push_back(i);
  }

  EvalSet set;
  set.strata_counts = strata;
  for (Difficulty d : kDifficulties) {
    const auto want_it = strata.find(d);
    if (want_it == strata.end() || want_it->second == 0) continue;
    const int want = want_it->second;
    if (want < 0) throw ConfigError("negative target for stratum " + upper(difficulty_name(d)));
    auto candidates = by_difficulty[d];
    const auto have = static_cast<int>(candidates.size());
    if (have < want) {
      throw InputError("stratum " + upper(difficulty_name(d)) + " needs " + std::to_string(want) +
                       " items but the pool has " + std::to_string(have) + " (short by " +
                       std::to_string(want - have) + ")");
    }
    // Partial Fisher-Yates: the first `want` slots become a uniform sample.
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d)));
    for (std::size_t i = 0; i < static_cast<std::size_t>(want); ++i) {
      const std::size_t j = i + uniform_index(rng, candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(static_cast<std::size_t>(want));
    std::sort(candidates.begin(), candidates.end());
    for (std::size_t idx : candidates) set.items.push_back(pool[idx]);
  }
  return set;
}

std::vector<std::string> Rubric::lines() const {
  std::vector<std::string> out;
  out.reserve(criteria.size());
  for (const auto& [name, description] : criteria) out.push_back(name + ": " + description);
  return out;
}

Rubric default_rubric() {
  return {{
      {"factual correctness", "the answer states nothing false about the science"},
      {"clarity of explanation", "the answer is easy to follow and well organized"},
      {"age appropriateness", "vocabulary and depth suit a K-12 student"},
      {"educational usefulness", "the answer helps a student understand the topic"},
  }};
}

std::string_view side_name(SideAssignment s) {
  return s == SideAssignment::kCandidateFirst ? "CANDIDATE_FIRST" : "BASELINE_FIRST";
}

std::string_view choice_name(Choice c) {
  switch (c) {
    case Choice::kFirst:
      return "FIRST";
    case Choice::kSecond:
      return "SECOND";
    case Choice::kTie:
      return "TIE";
  }
  return "?";
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kWin:
      return "WIN";
    case Verdict::kTie:
      return "TIE";
    case Verdict::kLoss:
      return "LOSS";
    case Verdict::kFailed:
      return "FAILED";
  }
  return "?";
}

Rng presentation_rng(std::uint64_t seed, std::string_view item_id, int run_index) {
  return Rng(mix_seed(mix_seed(seed, stable_hash(item_id)), static_cast<std::uint64_t>(run_index)));
}

Presentation randomize_presentation(const std::string& candidate, const std::string& baseline, Rng& rng) {
  if (uniform01(rng) < 0.5) return {candidate, baseline, SideAssignment::kCandidateFirst};
  return {baseline, candidate, SideAssignment::kBaselineFirst};
}

Verdict to_verdict(Choice choice, SideAssignment side) {
  if (choice == Choice::kTie) return Verdict::kTie;
  const bool first_is_candidate = side == SideAssignment::kCandidateFirst;
  return (choice == Choice::kFirst) == first_is_candidate ? Verdict::kWin : Verdict::kLoss;
}

nlohmann::json judge_payload(const JudgeRequest& request) {
  return {{"question", request.question},
          {"response_1", request.response_1},
          {"response_2", request.response_2},
          {"rubric", request.rubric},
          {"format", "verdict_json"}};
}

MockJudge::MockJudge(std::map<std::string, std::string> references_by_question)
    : references_(std::move(references_by_question)) {}

MockJudge::MockJudge(const EvalSet& eval_set) {
  for (const auto& item : eval_set.items) references_.emplace(item.question, item.answer);
}

std::vector<std::string> MockJudge::content_words(std::string_view text) {
  const auto& stop = textnorm::default_stopwords();
  std::set<std::string> words;
  for (auto& w : textnorm::alpha_tokens(text)) {
    if (!stop.count(w)) words.insert(std::move(w));
  }
  return {words.begin(), words.end()};
}

int MockJudge::overlap(std::string_view response, std::string_view reference) {
  const auto ref = content_words(reference);
  int n = 0;
  for (const auto& w : content_words(response)) n += std::binary_search(ref.begin(), ref.end(), w) ? 1 : 0;
  return n;
}

JudgeReply MockJudge::evaluate(const JudgeRequest& request) {
  const auto it = references_.find(request.question);
  if (it == references_.end()) throw InputError("mock judge has no reference for question: " + request.question);
  const int first = overlap(request.response_1, it->second);
  const int second = overlap(request.response_2, it->second);
  JudgeReply reply;
  reply.choice = first > second ? Choice::kFirst : second > first ? Choice::kSecond : Choice::kTie;
  reply.rationale = "overlap " + std::to_string(first) + " vs " + std::to_string(second);
  return reply;
}

nlohmann::json to_json(const Comparison& c) {
  nlohmann::json j = {{"item_id", c.item_id},
                      {"run_index", c.run_index},
                      {"side_assignment", std::string(side_name(c.side))},
                      {"presented", {c.response_1, c.response_2}},
                      {"verdict", std::string(verdict_name(c.verdict))},
                      {"judge_id", c.judge_id}};
  j["difficulty"] = c.difficulty ? nlohmann::json(std::string(difficulty_name(*c.difficulty))) : nlohmann::json();
  j["judge_rationale"] = c.judge_rationale ? nlohmann::json(*c.judge_rationale) : nlohmann::json();
  if (c.verdict == Verdict::kFailed) j["failure_reason"] = c.failure_reason;
  return j;
}

double win_rate(std::span<const Verdict> verdicts, TiePolicy policy) {
  long wins = 0, ties = 0, total = 0;
  for (Verdict v : verdicts) {
    if (v == Verdict::kFailed) continue;
    ++total;
    wins += v == Verdict::kWin;
    ties += v == Verdict::kTie;
  }
  if (total == 0) throw UndefinedRateError("win rate is undefined without judged comparisons");
  const double credit = policy == TiePolicy::kHalfWin ? wins + 0.5 * static_cast<double>(ties)
                                                      : static_cast<double>(wins);
  return credit / static_cast<double>(total);
}

RunStats mean_and_std(std::span<const double> values) {
  if (values.empty()) throw UndefinedRateError("no runs to aggregate");
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  RunStats s;
  s.mean = sum / n;
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
    s.mean = values.front();  // exact for repeated identical runs
  } else {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

WinRateReport aggregate_runs(std::span<const double> per_run_rates) {
  const auto s = mean_and_std(per_run_rates);
  WinRateReport r;
  r.per_run_rates.assign(per_run_rates.begin(), per_run_rates.end());
  r.mean = s.mean;
  r.std = s.std;
  r.n_runs = static_cast<int>(per_run_rates.size());
  return r;
}

nlohmann::json to_json(const WinRateReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [d, s] : r.per_difficulty) {
    per[std::string(difficulty_name(d))] = {{"mean", s.mean}, {"std", s.std}, {"n_items", s.n_items}};
  }
  return {{"mean", r.mean},     {"std", r.std},         {"per_run_rates", r.per_run_rates},
          {"per_difficulty", per}, {"n_items", r.n_items}, {"n_runs", r.n_runs},
          {"failed", r.failed}};
}

WinRateReport win_rate_report_from_json(const nlohmann::json& j) {
  WinRateReport r;
  try {
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    r.per_run_rates = j.at("per_run_rates").get<std::vector<double>>();
    r.n_items = j.at("n_items").get<int>();
    r.n_runs = j.at("n_runs").get<int>();
    r.failed = j.value("failed", 0);
    const auto per = j.value("per_difficulty", nlohmann::json::object());
    for (const auto& [key, value] : per.items()) {
      r.per_difficulty[parse_difficulty(key)] = {value.at("mean").get<double>(), value.at("std").get<double>(),
                                                 value.at("n_items").get<int>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed win-rate report: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("malformed win-rate report: ") + e.what());
  }
  if (static_cast<int>(r.per_run_rates.size()) != r.n_runs || r.n_runs < 1) {
    throw IoError("win-rate report: n_runs does not match per_run_rates");
  }
  return r;
}

namespace {

std::string missing_list(const EvalSet& set, const std::map<std::string, std::string>& answers) {
  std::string out;
  for (const auto& item : set.items) {
    if (answers.count(item.id)) continue;
    if (!out.empty()) out += ", ";
    out += item.id;
  }
  return out;
}

}  // namespace

EvaluationResult run_evaluation(const EvalSet& eval_set, const std::map<std::string, std::string>& candidate,
                                const std::map<std::string, std::string>& baseline, Judge& judge,
                                const EvalOptions& options) {
  if (options.n_runs < 1) throw ConfigError("n_runs must be at least 1");
  if (options.parallelism < 1) throw ConfigError("parallelism must be at least 1");
  if (eval_set.items.empty()) throw InputError("evaluation set is empty");
  const auto missing_candidate = missing_list(eval_set, candidate);
  const auto missing_baseline = missing_list(eval_set, baseline);
  if (!missing_candidate.empty() || !missing_baseline.empty()) {
    std::string msg = "answers missing for evaluation items:";
    if (!missing_candidate.empty()) msg += " candidate [" + missing_candidate + "]";
    if (!missing_baseline.empty()) msg += " baseline [" + missing_baseline + "]";
    throw InputError(msg);
  }

  const std::size_t n_items = eval_set.items.size();
  const std::size_t total = n_items * static_cast<std::size_t>(options.n_runs);
  const auto rubric = options.rubric.lines();
  const std::string judge_id = judge.id();
  std::vector<Comparison> ledger(total);

  auto judge_one = [&](std::size_t slot) {
    const int run = static_cast<int>(slot / n_items);
    const auto& item = eval_set.items[slot % n_items];
    Comparison c;
    c.item_id = item.id;
    c.run_index = run;
    c.difficulty = item.difficulty;
    c.judge_id = judge_id;
    Rng rng = presentation_rng(options.seed, item.id, run);
    auto shown = randomize_presentation(candidate.at(item.id), baseline.at(item.id), rng);
    c.side = shown.side;
    c.response_1 = std::move(shown.response_1);
    c.response_2 = std::move(shown.response_2);
    try {
      const auto reply = judge.evaluate({item.question, c.response_1, c.response_2, rubric});
      c.verdict = to_verdict(reply.choice, c.side);
      c.judge_rationale = reply.rationale;
    } catch (const std::exception& e) {
      c.verdict = Verdict::kFailed;
      c.failure_reason = e.what();
    }
    ledger[slot] = std::move(c);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t slot = next++; slot < total; slot = next++) judge_one(slot);
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(options.parallelism), total);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<double> rates;
  std::map<Difficulty, std::vector<double>> stratum_rates;
  std::map<Difficulty, int> stratum_items;
  for (const auto& item : eval_set.items) {
    if (item.difficulty) ++stratum_items[*item.difficulty];
  }
  int failed = 0;
  for (int run = 0; run < options.n_runs; ++run) {
    std::vector<Verdict> all;
    std::map<Difficulty, std::vector<Verdict>> by_stratum;
    for (std::size_t i = 0; i < n_items; ++i) {
      const auto& c = ledger[static_cast<std::size_t>(run) * n_items + i];
      failed += c.verdict == Verdict::kFailed;
      all.push_back(c.verdict);
      if (c.difficulty) by_stratum[*c.difficulty].push_back(c.verdict);
    }
    try {
      rates.push_back(win_rate(all, options.tie_policy));
    } catch (const UndefinedRateError&) {
      throw UndefinedRateError("run " + std::to_string(run) + ": every comparison failed");
    }
    for (const auto& [d, verdicts] : by_stratum) {
      if (std::any_of(verdicts.begin(), verdicts.end(), [](Verdict v) { return v != Verdict::kFailed; })) {
        stratum_rates[d].push_back(win_rate(verdicts, options.tie_policy));
      }
    }
  }

  EvaluationResult result;
  result.report = aggregate_runs(rates);
  result.report.n_items = static_cast<int>(n_items);
  result.report.failed = failed;
  for (const auto& [d, count] : stratum_items) {
    DifficultyStats s;
    s.n_items = count;
    if (const auto it = stratum_rates.find(d); it != stratum_rates.end()) {
      const auto ms = mean_and_std(it->second);
      s.mean = ms.mean;
      s.std = ms.std;
    }
    result.report.per_difficulty[d] = s;
  }
  result.ledger = std::move(ledger);
  return result;
}

void write_ledger(const std::vector<Comparison>& ledger, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(ledger.size());
  for (const auto& c : ledger) rows.push_back(to_json(c));
  write_jsonl_atomic(path, rows);
}

std::string table_row(std::string_view variant, const WinRateReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * report.mean, 100.0 * report.std);
  return std::string(variant) + "," + buf;
}

}  // namespace helioqa::arbiter
