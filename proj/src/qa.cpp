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

#include "helioqa/qa.hpp"

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"

namespace helioqa {

std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy:
      return "easy";
    case Difficulty::kMedium:
      return "medium";
    case Difficulty::kHard:
      return "hard";
  }
  return "?";
}

Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "medium") return Difficulty::kMedium;
  if (s == "hard") return Difficulty::kHard;
  throw InputError("unknown difficulty '" + std::string(s) + "'");
}

void validate(const QAPair& pair) {
  if (pair.question.empty()) throw InputError("QA pair '" + pair.id + "': empty question");
  if (pair.answer.empty()) throw InputError("QA pair '" + pair.id + "': empty answer");
}

nlohmann::json to_json(const QAPair& p) {
  nlohmann::json j = {{"id", p.id}, {"question", p.question}, {"answer", p.answer}};
  if (p.difficulty) j["difficulty"] = std::string(difficulty_name(*p.difficulty));
  return j;
}

QAPair qa_pair_from_json(const nlohmann::json& j) {
  QAPair p;
  try {
    p.id = j.at("id").get<std::string>();
    p.question = j.at("question").get<std::string>();
    p.answer = j.at("answer").get<std::string>();
    if (j.contains("difficulty") && !j.at("difficulty").is_null()) {
      p.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed QA record: ") + e.what());
  }
  validate(p);
  return p;
}

std::vector<QAPair> load_qa_jsonl(const std::filesystem::path& path) {
  std::vector<QAPair> pairs;
  for (const auto& row : read_jsonl(path)) pairs.push_back(qa_pair_from_json(row));
  return pairs;
}

void save_qa_jsonl(const std::filesystem::path& path, const std::vector<QAPair>& pairs) {
  std::vector<nlohmann::json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(to_json(p));
  write_jsonl_atomic(path, rows);
}

std::map<std::string, std::string> load_answers_jsonl(const std::filesystem::path& path) {
  std::map<std::string, std::string> answers;
  for (const auto& row : read_jsonl(path)) {
    std::string id, answer;
    try {
      id = row.at("id").get<std::string>();
      answer = row.at("answer").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": malformed answer record: " + e.what());
    }
    if (!answers.emplace(id, std::move(answer)).second) {
      throw IoError(path.string() + ": duplicate answer id '" + id + "'");
    }
  }
  return answers;
}

void save_answers_jsonl(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& answers) {
  std::vector<nlohmann::json> rows;
  rows.reserve(answers.size());
  for (const auto& [id, a] : answers) rows.push_back({{"id", id}, {"answer", a}});
  write_jsonl_atomic(path, rows);
}

}  // namespace helioqa
