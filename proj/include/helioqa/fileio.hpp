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
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace helioqa {

/// Reads a whole file as bytes. Throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a truncated artifact. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

/// One JSON value per non-blank line. Errors name the line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl_atomic(const std::filesystem::path& path,
                        const std::vector<nlohmann::json>& rows);

std::string base64_encode(std::string_view bytes);
/// Throws InputError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace helioqa
