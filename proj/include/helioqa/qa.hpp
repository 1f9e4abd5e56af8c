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

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace helioqa {

enum class Difficulty { kEasy, kMedium, kHard };

/// "easy" | "medium" | "hard"
std::string_view difficulty_name(Difficulty d);
/// Throws InputError on anything else.
Difficulty parse_difficulty(std::string_view s);

struct QAPair {
  std::string id;
  std::string question;
  std::string answer;
  std::optional<Difficulty> difficulty;  // required for evaluation items only
};

/// Throws InputError when question or answer is empty.
void validate(const QAPair& pair);

nlohmann::json to_json(const QAPair& p);
QAPair qa_pair_from_json(const nlohmann::json& j);

/// JSON Lines: {"id", "question", "answer", "difficulty"?}.
std::vector<QAPair> load_qa_jsonl(const std::filesystem::path& path);
void save_qa_jsonl(const std::filesystem::path& path, const std::vector<QAPair>& pairs);

/// JSON Lines: {"id", "answer"}. Throws IoError on duplicate ids.
std::map<std::string, std::string> load_answers_jsonl(const std::filesystem::path& path);
void save_answers_jsonl(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& answers);

}  // namespace helioqa
