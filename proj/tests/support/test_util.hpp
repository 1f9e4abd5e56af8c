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
#include <random>
#include <string>
#include <unistd.h>

#include "helioqa/microlm.hpp"

namespace helioqa::testing {

inline std::filesystem::path data_dir() { return HELIOQA_DATA_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("helioqa_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

/// 1 layer, d_model 16, 2 heads, vocab 32, rank 2.
inline microlm::ModelConfig tiny_config() {
  microlm::ModelConfig c;
  c.vocab_size = 32;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 16;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  return c;
}

/// Fills every adapter B with small random values so adapters are not a
/// no-op.
inline void randomize_b(microlm::ModelState& s, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& [name, ad] : s.adapters) {
    for (double& v : ad.b.data) v = normal(rng);
  }
}

inline std::vector<TokenId> random_ids(std::mt19937_64& rng, int len, int vocab) {
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  std::vector<TokenId> ids(static_cast<std::size_t>(len));
  for (auto& id : ids) id = pick(rng);
  return ids;
}

}  // namespace helioqa::testing
