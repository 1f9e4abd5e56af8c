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

// A small pre-LayerNorm decoder-only transformer whose base weights are
// frozen and whose query/value projections carry trainable low-rank (LoRA)
// adapters:
//
//   y = W x + scale * B (A dropout(x)),   scale = alpha / rank
//
// with W (d x k) frozen, A (r x k) and B (d x r) trainable. Gradients are
// computed by hand-written reverse mode for the adapters only.
//
// Parameters are stored in 64-bit. Arithmetic runs in either 32-bit (fast
// training) or 64-bit (gradient checks, merge checks, decoding).

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "helioqa/tokenize.hpp"

namespace helioqa::microlm {

enum class Projection { kQuery, kValue };

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 128;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  double lora_dropout = 0.05;
  std::set<Projection> lora_targets = {Projection::kQuery, Projection::kValue};
  // false applies B*A unscaled (scale 1)
  bool lora_scale_by_rank = true;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  double lora_scale() const { return lora_scale_by_rank ? lora_alpha / lora_rank : 1.0; }
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Dense row-major tensor of rank 1 or 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int rows, int cols) : shape{rows, cols}, data(static_cast<std::size_t>(rows) * cols, 0.0) {}
  explicit Tensor(int n) : shape{n}, data(static_cast<std::size_t>(n), 0.0) {}

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Low-rank pair for one projection: A is rank x k, B is d x rank.
struct Adapter {
  Tensor a;
  Tensor b;

  friend bool operator==(const Adapter&, const Adapter&) = default;
};

struct ModelState {
  ModelConfig config;
  std::map<std::string, Tensor> base;       // frozen
  std::map<std::string, Adapter> adapters;  // keyed by the projection's base name
  std::uint64_t rng_seed = 0;
};

/// Base tensor names, e.g. "layers.1.attn.wq".
std::string projection_name(int layer, Projection p);

/// Random frozen base standing in for a pretrained model. No adapters.
ModelState init_base(const ModelConfig& config, std::uint64_t seed);

/// Adds adapters on every targeted projection: A ~ N(0, 0.02^2), B = 0.
/// Throws StateError if adapters are already attached.
void attach_adapters(ModelState& state, std::uint64_t seed);

/// init_base followed by attach_adapters.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

/// W + (alpha / rank) * B * A. Throws DimensionError naming `projection`.
Tensor effective_weight(const Tensor& w, const Tensor& a, const Tensor& b, double alpha,
                        int rank, const std::string& projection = "projection");

/// Same with an explicit scale factor.
Tensor effective_weight_scaled(const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                               const std::string& projection = "projection");

enum class Mode { kTrain, kEval };
enum class Precision { kFloat32, kFloat64 };

struct RunOptions {
  Mode mode = Mode::kEval;
  Precision precision = Precision::kFloat64;
  // Only read in kTrain mode; selects the adapter dropout masks.
  std::uint64_t dropout_seed = 0;
};

using Logits = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Logits for every position (len x vocab_size). kTrain mode applies
/// adapter-input dropout seeded from state.rng_seed.
/// Throws LengthError (too long or empty) and VocabularyError.
Logits forward(const ModelState& state, std::span<const TokenId> ids, Mode mode = Mode::kEval);
Logits forward(const ModelState& state, std::span<const TokenId> ids, const RunOptions& opts);

/// Mean masked next-token negative log-likelihood, in log-sum-exp form.
/// Throws DimensionError on size mismatch, DegenerateBatchError if no
/// position is selected.
double nll_loss(const Logits& logits, std::span<const TokenId> targets,
                const std::vector<bool>& loss_mask);

struct Gradients {
  std::map<std::string, Adapter> adapters;  // same keys and shapes as ModelState::adapters
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

/// Loss and exact adapter gradients. Base tensors get no gradient.
LossAndGradients backward(const ModelState& state, std::span<const TokenId> ids,
                          std::span<const TokenId> targets, const std::vector<bool>& loss_mask,
                          const RunOptions& opts = {});

/// Folds every adapter into a copy of its base weight and drops the
/// adapters. Throws StateError when there is nothing to merge.
ModelState merge_adapters(const ModelState& state);

/// Row-wise softmax in 64-bit.
Logits softmax_rows(const Logits& logits);

}  // namespace helioqa::microlm
