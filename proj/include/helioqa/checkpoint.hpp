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

// Binary checkpoint layout (all integers little-endian):
//
//   "SGQA"                      4-byte magic
//   u32 version                 currently 1
//   u64 header_len
//   header                      JSON: config, rng_seed, tensor tables
//   base section payload        f64 tensors in table order
//   adapter section payload     f64 tensors in table order
//
// The base section is a contiguous byte range, so the frozen-base property
// can be checked by comparing serialize_base() output before and after
// training.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "helioqa/microlm.hpp"

namespace helioqa::microlm {

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'Q', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw payload of the base section.
std::string serialize_base(const ModelState& state);

/// Raw payload of the adapter section (A then B for each adapter, by name).
std::string serialize_adapters(const ModelState& state);

std::string serialize_checkpoint(const ModelState& state);
/// Throws IoError on bad magic, version, header or truncated payload.
ModelState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace helioqa::microlm
