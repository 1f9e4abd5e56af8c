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

// Pairwise LLM-as-a-judge evaluation: stratified test sets, randomized
// anonymous presentation, win/tie/loss accounting and repeated-run
// statistics.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "helioqa/qa.hpp"
#include "helioqa/rng.hpp"

namespace helioqa::arbiter {

using StrataCounts = std::map<Difficulty, int>;

/// 100 easy, 150 medium, 50 hard.
StrataCounts default_strata();

struct EvalSet {
  std::vector<QAPair> items;  // grouped easy, medium, hard; pool order within a group
  StrataCounts strata_counts;
};

/// Seeded sampling without replacement inside each difficulty stratum.
/// Throws InputError naming the stratum and shortfall, on duplicate ids, and
/// on pool items without a difficulty.
EvalSet build_eval_set(const std::vector<QAPair>& pool, const StrataCounts& strata, std::uint64_t seed);

struct Rubric {
  std::vector<std::pair<std::string, std::string>> criteria;  // (name, description)

  /// "name: description" per criterion.
  std::vector<std::string> lines() const;
};

/// Factual correctness, clarity of explanation, age appropriateness,
/// educational usefulness.
Rubric default_rubric();

enum class SideAssignment { kCandidateFirst, kBaselineFirst };
enum class Choice { kFirst, kSecond, kTie };
enum class Verdict { kWin, kTie, kLoss, kFailed };

std::string_view side_name(SideAssignment s);
std::string_view choice_name(Choice c);
std::string_view verdict_name(Verdict v);

struct Presentation {
  std::string response_1;
  std::string response_2;
  SideAssignment side = SideAssignment::kCandidateFirst;
};

/// Generator for one (item, run) comparison, independent of scheduling.
Rng presentation_rng(std::uint64_t seed, std::string_view item_id, int run_index);

/// A fair coin from `rng` decides which response is shown first.
Presentation randomize_presentation(const std::string& candidate, const std::string& baseline, Rng& rng);

/// Candidate-perspective verdict from the judge's positional choice.
Verdict to_verdict(Choice choice, SideAssignment side);

struct JudgeRequest {
  std::string question;
  std::string response_1;
  std::string response_2;
  std::vector<std::string> rubric;
};

struct JudgeReply {
  Choice choice = Choice::kTie;
  std::string rationale;
};

/// Wire payload: {"question", "response_1", "response_2", "rubric",
/// "format": "verdict_json"}.
nlohmann::json judge_payload(const JudgeRequest& request);

/// Implementations must tolerate concurrent evaluate() calls.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeReply evaluate(const JudgeRequest& request) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic offline judge: the response sharing more distinct content
/// words with the item's reference answer wins; equal overlap is a tie.
class MockJudge : public Judge {
 public:
  /// References keyed by question text.
  explicit MockJudge(std::map<std::string, std::string> references_by_question);
  /// References taken from the eval set items.
  explicit MockJudge(const EvalSet& eval_set);

  JudgeReply evaluate(const JudgeRequest& request) override;
  std::string id() const override { return "mock-overlap-v1"; }

  /// Distinct lower-cased alphabetic words minus stopwords.
  static std::vector<std::string> content_words(std::string_view text);
  /// Number of distinct content words of `response` present in `reference`.
  static int overlap(std::string_view response, std::string_view reference);

 private:
  std::map<std::string, std::string> references_;
};

struct Comparison {
  std::string item_id;
  int run_index = 0;
  std::optional<Difficulty> difficulty;
  SideAssignment side = SideAssignment::kCandidateFirst;
  std::string response_1;
  std::string response_2;
  Verdict verdict = Verdict::kFailed;
  std::optional<std::string> judge_rationale;
  std::string judge_id;
  std::string failure_reason;  // empty unless verdict is kFailed

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

nlohmann::json to_json(const Comparison& c);

enum class TiePolicy {
  kDenominatorOnly,  // wins / (wins + ties + losses)
  kHalfWin,          // (wins + ties / 2) / (wins + ties + losses)
};

/// Failed comparisons are ignored. Throws UndefinedRateError when nothing
/// else remains.
double win_rate(std::span<const Verdict> verdicts, TiePolicy policy = TiePolicy::kDenominatorOnly);

struct RunStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one run
};

/// Throws UndefinedRateError for an empty list.
RunStats mean_and_std(std::span<const double> values);

struct DifficultyStats {
  double mean = 0.0;
  double std = 0.0;
  int n_items = 0;
};

struct WinRateReport {
  std::vector<double> per_run_rates;
  double mean = 0.0;
  double std = 0.0;
  std::map<Difficulty, DifficultyStats> per_difficulty;
  int n_items = 0;
  int n_runs = 0;
  int failed = 0;
};

/// Mean and sample std of the per-run rates; other fields left empty.
WinRateReport aggregate_runs(std::span<const double> per_run_rates);

nlohmann::json to_json(const WinRateReport& r);
WinRateReport win_rate_report_from_json(const nlohmann::json& j);

struct EvalOptions {
  int n_runs = 3;
  std::uint64_t seed = 0;
  int parallelism = 4;
  TiePolicy tie_policy = TiePolicy::kDenominatorOnly;
  Rubric rubric = default_rubric();
};

struct EvaluationResult {
  WinRateReport report;
  std::vector<Comparison> ledger;  // run-major, eval-set order within a run
};

/// Judges every (run, item) pair with at most `parallelism` concurrent
/// judge calls. A judge exception marks that comparison failed. Throws
/// InputError listing item ids whose answers are missing.
EvaluationResult run_evaluation(const EvalSet& eval_set, const std::map<std::string, std::string>& candidate,
                                const std::map<std::string, std::string>& baseline, Judge& judge,
                                const EvalOptions& options = {});

void write_ledger(const std::vector<Comparison>& ledger, const std::filesystem::path& path);

/// "Model Variant,Win Rate (mean ± std)"
inline constexpr std::string_view kTableHeader = "Model Variant,Win Rate (mean ± std)";
/// e.g. "Full,72.0 ± 3.2" (percentages, one decimal).
std::string table_row(std::string_view variant, const WinRateReport& report);

}  // namespace helioqa::arbiter
