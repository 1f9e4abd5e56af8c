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

#include "helioqa/microlm.hpp"

#include <cmath>
#include <limits>

#include "helioqa/error.hpp"
#include "helioqa/rng.hpp"

namespace helioqa::microlm {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kAdapterInitStd = 0.02;

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

template <typename Real>
Mat<Real> to_mat(const Tensor& t) {
  return Eigen::Map<const Mat<double>>(t.data.data(), t.rows(), t.cols()).template cast<Real>();
}

template <typename Real>
RowVec<Real> to_row(const Tensor& t) {
  return Eigen::Map<const RowVec<double>>(t.data.data(), 1, static_cast<Eigen::Index>(t.data.size()))
      .template cast<Real>();
}

template <typename Real>
void add_into(Tensor& t, const Mat<Real>& m) {
  Eigen::Map<Mat<double>>(t.data.data(), t.rows(), t.cols()) += m.template cast<double>();
}

const Tensor& require(const ModelState& s, const std::string& name) {
  auto it = s.base.find(name);
  if (it == s.base.end()) throw StateError("model is missing base tensor '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Weights converted to the working precision.

template <typename Real>
struct Lora {
  bool present = false;
  std::string name;
  Mat<Real> a;  // r x k
  Mat<Real> b;  // d x r
};

template <typename Real>
struct LayerWeights {
  RowVec<Real> ln1_g, ln1_b, ln2_g, ln2_b;
  Mat<Real> wq, wk, wv, wo, w1, w2;
  Lora<Real> q, v;
};

template <typename Real>
struct Weights {
  Mat<Real> tok_emb, pos_emb, head;
  RowVec<Real> lnf_g, lnf_b;
  std::vector<LayerWeights<Real>> layers;
  Real scale = 1;
  double dropout_p = 0;
};

template <typename Real>
Weights<Real> load_weights(const ModelState& s) {
  const auto& c = s.config;
  Weights<Real> w;
  w.tok_emb = to_mat<Real>(require(s, "tok_emb"));
  w.pos_emb = to_mat<Real>(require(s, "pos_emb"));
  w.head = to_mat<Real>(require(s, "head"));
  w.lnf_g = to_row<Real>(require(s, "ln_f.gain"));
  w.lnf_b = to_row<Real>(require(s, "ln_f.bias"));
  w.scale = static_cast<Real>(c.lora_scale());
  w.dropout_p = c.lora_dropout;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights<Real> lw;
    lw.ln1_g = to_row<Real>(require(s, p + "ln1.gain"));
    lw.ln1_b = to_row<Real>(require(s, p + "ln1.bias"));
    lw.ln2_g = to_row<Real>(require(s, p + "ln2.gain"));
    lw.ln2_b = to_row<Real>(require(s, p + "ln2.bias"));
    lw.wq = to_mat<Real>(require(s, p + "attn.wq"));
    lw.wk = to_mat<Real>(require(s, p + "attn.wk"));
    lw.wv = to_mat<Real>(require(s, p + "attn.wv"));
    lw.wo = to_mat<Real>(require(s, p + "attn.wo"));
    lw.w1 = to_mat<Real>(require(s, p + "mlp.w1"));
    lw.w2 = to_mat<Real>(require(s, p + "mlp.w2"));
    for (auto [proj, lora] : {std::pair{Projection::kQuery, &lw.q}, std::pair{Projection::kValue, &lw.v}}) {
      lora->name = projection_name(l, proj);
      auto it = s.adapters.find(lora->name);
      if (it == s.adapters.end()) continue;
      lora->present = true;
      lora->a = to_mat<Real>(it->second.a);
      lora->b = to_mat<Real>(it->second.b);
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Building blocks.

template <typename Real>
struct NormCache {
  Mat<Real> xhat;
  Eigen::Matrix<Real, Eigen::Dynamic, 1> rstd;
};

template <typename Real>
Mat<Real> layer_norm(const Mat<Real>& x, const RowVec<Real>& g, const RowVec<Real>& b,
                     NormCache<Real>& cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  Mat<Real> y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = x.row(i).mean();
    const RowVec<Real> centered = x.row(i).array() - mean;
    const Real var = centered.squaredNorm() / static_cast<Real>(d);
    const Real rstd = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = centered * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(g) + b;
  }
  return y;
}

template <typename Real>
Mat<Real> layer_norm_backward(const Mat<Real>& dy, const RowVec<Real>& g, const NormCache<Real>& cache) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  Mat<Real> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVec<Real> dxhat = dy.row(i).cwiseProduct(g);
    const Real m1 = dxhat.mean();
    const Real m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

template <typename Real>
Real gelu(Real u) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  return Real(0.5) * u * (Real(1) + std::tanh(c * (u + Real(0.044715) * u * u * u)));
}

template <typename Real>
Real gelu_grad(Real u) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);
  const Real t = std::tanh(c * (u + Real(0.044715) * u * u * u));
  return Real(0.5) * (Real(1) + t) +
         Real(0.5) * u * (Real(1) - t * t) * c * (Real(1) + Real(3) * Real(0.044715) * u * u);
}

template <typename Real>
struct ProjCache {
  Mat<Real> xd;    // adapter input after dropout
  Mat<Real> z;     // xd * A^T
  Mat<Real> mask;  // dropout multiplier (empty when no dropout)
};

// y = x W^T + scale * (dropout(x) A^T) B^T
template <typename Real>
Mat<Real> project(const Mat<Real>& x, const Mat<Real>& w, const Lora<Real>& lora, Real scale,
                  double dropout_p, bool train, std::uint64_t dropout_seed, ProjCache<Real>& cache) {
  Mat<Real> y = x * w.transpose();
  if (!lora.present) return y;
  if (train && dropout_p > 0.0) {
    Rng rng(mix_seed(dropout_seed, stable_hash(lora.name)));
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - dropout_p));
    cache.mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < cache.mask.size(); ++i) {
      cache.mask.data()[i] = uniform01(rng) < dropout_p ? Real(0) : keep_scale;
    }
    cache.xd = x.cwiseProduct(cache.mask);
  } else {
    cache.mask.resize(0, 0);
    cache.xd = x;
  }
  cache.z = cache.xd * lora.a.transpose();
  y.noalias() += scale * (cache.z * lora.b.transpose());
  return y;
}

// Returns dx; accumulates adapter gradients into `grad` when present.
template <typename Real>
Mat<Real> project_backward(const Mat<Real>& dy, const Mat<Real>& w, const Lora<Real>& lora, Real scale,
                           const ProjCache<Real>& cache, Adapter* grad) {
  Mat<Real> dx = dy * w;
  if (!lora.present) return dx;
  const Mat<Real> db = scale * (dy.transpose() * cache.z);
  const Mat<Real> dz = scale * (dy * lora.b);
  const Mat<Real> da = dz.transpose() * cache.xd;
  Mat<Real> dxd = dz * lora.a;
  if (cache.mask.size() > 0) dxd = dxd.cwiseProduct(cache.mask);
  dx += dxd;
  if (grad != nullptr) {
    add_into(grad->a, da);
    add_into(grad->b, db);
  }
  return dx;
}

template <typename Real>
struct LayerCache {
  NormCache<Real> ln1, ln2;
  Mat<Real> h1, q, k, v, attn, h2, u, g;
  ProjCache<Real> pq, pv;
  std::vector<Mat<Real>> probs;  // per head, L x L, zero above the diagonal
};

template <typename Real>
struct ForwardCache {
  std::vector<LayerCache<Real>> layers;
  NormCache<Real> lnf;
  Mat<Real> hf;
};

template <typename Real>
Mat<Real> causal_attention(const Mat<Real>& q, const Mat<Real>& k, const Mat<Real>& v, int n_heads,
                           std::vector<Mat<Real>>& probs) {
  const auto n = q.rows();
  const auto d = q.cols();
  const auto dh = d / n_heads;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  Mat<Real> out = Mat<Real>::Zero(n, d);
  probs.assign(static_cast<std::size_t>(n_heads), Mat<Real>::Zero(n, n));
  std::vector<Real> scores(static_cast<std::size_t>(n));
  for (int h = 0; h < n_heads; ++h) {
    auto& p = probs[static_cast<std::size_t>(h)];
    const auto off = h * dh;
    for (Eigen::Index t = 0; t < n; ++t) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (Eigen::Index j = 0; j <= t; ++j) {
        const Real s = q.row(t).segment(off, dh).dot(k.row(j).segment(off, dh)) * inv_sqrt;
        scores[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      Real sum = 0;
      for (Eigen::Index j = 0; j <= t; ++j) {
        const Real e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
        p(t, j) = e;
        sum += e;
      }
      for (Eigen::Index j = 0; j <= t; ++j) {
        p(t, j) /= sum;
        out.row(t).segment(off, dh) += p(t, j) * v.row(j).segment(off, dh);
      }
    }
  }
  return out;
}

template <typename Real>
void causal_attention_backward(const Mat<Real>& dout, const Mat<Real>& q, const Mat<Real>& k,
                               const Mat<Real>& v, int n_heads, const std::vector<Mat<Real>>& probs,
                               Mat<Real>& dq, Mat<Real>& dk, Mat<Real>& dv) {
  const auto n = q.rows();
  const auto d = q.cols();
  const auto dh = d / n_heads;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  dq = Mat<Real>::Zero(n, d);
  dk = Mat<Real>::Zero(n, d);
  dv = Mat<Real>::Zero(n, d);
  std::vector<Real> dp(static_cast<std::size_t>(n));
  for (int h = 0; h < n_heads; ++h) {
    const auto& p = probs[static_cast<std::size_t>(h)];
    const auto off = h * dh;
    for (Eigen::Index t = 0; t < n; ++t) {
      const auto dot = dout.row(t).segment(off, dh);
      Real row_dot = 0;
      for (Eigen::Index j = 0; j <= t; ++j) {
        const Real g = dot.dot(v.row(j).segment(off, dh));
        dp[static_cast<std::size_t>(j)] = g;
        row_dot += p(t, j) * g;
        dv.row(j).segment(off, dh) += p(t, j) * dot;
      }
      for (Eigen::Index j = 0; j <= t; ++j) {
        const Real ds = p(t, j) * (dp[static_cast<std::size_t>(j)] - row_dot) * inv_sqrt;
        dq.row(t).segment(off, dh) += ds * k.row(j).segment(off, dh);
        dk.row(j).segment(off, dh) += ds * q.row(t).segment(off, dh);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Full model.

void check_input(const ModelConfig& c, std::span<const TokenId> ids) {
  if (ids.empty()) throw LengthError("empty input sequence");
  if (static_cast<int>(ids.size()) > c.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= c.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(c.vocab_size));
    }
  }
}

template <typename Real>
Mat<Real> run_forward(const ModelConfig& c, const Weights<Real>& w, std::span<const TokenId> ids,
                      const RunOptions& opts, ForwardCache<Real>& cache) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  const bool train = opts.mode == Mode::kTrain;
  Mat<Real> x(n, c.d_model);
  for (Eigen::Index t = 0; t < n; ++t) {
    x.row(t) = w.tok_emb.row(ids[static_cast<std::size_t>(t)]) + w.pos_emb.row(t);
  }
  cache.layers.resize(w.layers.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    auto& lc = cache.layers[l];
    lc.h1 = layer_norm(x, lw.ln1_g, lw.ln1_b, lc.ln1);
    lc.q = project(lc.h1, lw.wq, lw.q, w.scale, w.dropout_p, train, opts.dropout_seed, lc.pq);
    lc.k = lc.h1 * lw.wk.transpose();
    lc.v = project(lc.h1, lw.wv, lw.v, w.scale, w.dropout_p, train, opts.dropout_seed, lc.pv);
    lc.attn = causal_attention(lc.q, lc.k, lc.v, c.n_heads, lc.probs);
    x.noalias() += lc.attn * lw.wo.transpose();
    lc.h2 = layer_norm(x, lw.ln2_g, lw.ln2_b, lc.ln2);
    lc.u = lc.h2 * lw.w1.transpose();
    lc.g = lc.u.unaryExpr([](Real u) { return gelu(u); });
    x.noalias() += lc.g * lw.w2.transpose();
  }
  cache.hf = layer_norm(x, w.lnf_g, w.lnf_b, cache.lnf);
  return cache.hf * w.head.transpose();
}

template <typename Real>
Gradients run_backward(const ModelState& s, const Weights<Real>& w, const ForwardCache<Real>& cache,
                       const Mat<Real>& dlogits) {
  Gradients grads;
  for (const auto& [name, ad] : s.adapters) {
    grads.adapters[name] = {Tensor(ad.a.rows(), ad.a.cols()), Tensor(ad.b.rows(), ad.b.cols())};
  }
  auto grad_for = [&](const Lora<Real>& lora) -> Adapter* {
    if (!lora.present) return nullptr;
    return &grads.adapters.at(lora.name);
  };

  const Mat<Real> dhf = dlogits * w.head;
  Mat<Real> dx = layer_norm_backward(dhf, w.lnf_g, cache.lnf);
  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& lc = cache.layers[li];
    // x_out = x_mid + gelu(h2 W1^T) W2^T
    Mat<Real> du = (dx * lw.w2).cwiseProduct(lc.u.unaryExpr([](Real u) { return gelu_grad(u); }));
    dx += layer_norm_backward(Mat<Real>(du * lw.w1), lw.ln2_g, lc.ln2);
    // x_mid = x_in + attn Wo^T
    const Mat<Real> dattn = dx * lw.wo;
    Mat<Real> dq, dk, dv;
    causal_attention_backward(dattn, lc.q, lc.k, lc.v, s.config.n_heads, lc.probs, dq, dk, dv);
    Mat<Real> dh1 = project_backward(dq, lw.wq, lw.q, w.scale, lc.pq, grad_for(lw.q));
    dh1 += dk * lw.wk;
    dh1 += project_backward(dv, lw.wv, lw.v, w.scale, lc.pv, grad_for(lw.v));
    dx += layer_norm_backward(dh1, lw.ln1_g, lc.ln1);
  }
  return grads;
}

// Loss over masked rows and its gradient w.r.t. the logits.
double loss_and_grad(const Logits& logits, std::span<const TokenId> targets,
                     const std::vector<bool>& mask, Logits* dlogits) {
  const auto n = logits.rows();
  if (static_cast<std::size_t>(n) != targets.size() || targets.size() != mask.size()) {
    throw DimensionError("nll_loss: logits rows, targets and mask sizes differ (" + std::to_string(n) +
                         ", " + std::to_string(targets.size()) + ", " + std::to_string(mask.size()) + ")");
  }
  long count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw DegenerateBatchError("loss mask selects no positions");
  if (dlogits != nullptr) *dlogits = Logits::Zero(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const TokenId y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= logits.cols()) {
      throw VocabularyError("target id " + std::to_string(y) + " outside vocabulary");
    }
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    total += lse - logits(t, y);
    if (dlogits != nullptr) {
      dlogits->row(t) = (logits.row(t).array() - lse).exp().matrix() / static_cast<double>(count);
      (*dlogits)(t, y) -= 1.0 / static_cast<double>(count);
    }
  }
  return total / static_cast<double>(count);
}

template <typename Real>
Logits forward_impl(const ModelState& s, std::span<const TokenId> ids, const RunOptions& opts) {
  const auto w = load_weights<Real>(s);
  ForwardCache<Real> cache;
  return run_forward(s.config, w, ids, opts, cache).template cast<double>();
}

template <typename Real>
LossAndGradients backward_impl(const ModelState& s, std::span<const TokenId> ids,
                               std::span<const TokenId> targets, const std::vector<bool>& mask,
                               const RunOptions& opts) {
  const auto w = load_weights<Real>(s);
  ForwardCache<Real> cache;
  const Logits logits = run_forward(s.config, w, ids, opts, cache).template cast<double>();
  Logits dlogits;
  LossAndGradients out;
  out.loss = loss_and_grad(logits, targets, mask, &dlogits);
  out.grads = run_backward(s, w, cache, Mat<Real>(dlogits.cast<Real>()));
  return out;
}

void fill_normal(Tensor& t, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(mix_seed(seed, stable_hash(name)));
  for (double& v : t.data) v = stddev * standard_normal(rng);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_seq_len, "max_seq_len");
  positive(lora_rank, "lora_rank");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (lora_rank > d_model) throw ConfigError("lora_rank must not exceed d_model");
  if (!(lora_alpha > 0.0)) throw ConfigError("lora_alpha must be positive");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw ConfigError("lora_dropout must lie in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
  auto targets = nlohmann::json::array();
  for (auto p : c.lora_targets) targets.push_back(p == Projection::kQuery ? "query" : "value");
  return {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
          {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
          {"lora_rank", c.lora_rank},     {"lora_alpha", c.lora_alpha},
          {"lora_dropout", c.lora_dropout}, {"lora_targets", targets},
          {"lora_scale_by_rank", c.lora_scale_by_rank}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
    c.lora_dropout = j.value("lora_dropout", c.lora_dropout);
    c.lora_scale_by_rank = j.value("lora_scale_by_rank", c.lora_scale_by_rank);
    if (j.contains("lora_targets")) {
      c.lora_targets.clear();
      for (const auto& t : j.at("lora_targets")) {
        const auto s = t.get<std::string>();
        if (s == "query") {
          c.lora_targets.insert(Projection::kQuery);
        } else if (s == "value") {
          c.lora_targets.insert(Projection::kValue);
        } else {
          throw ConfigError("unknown lora target '" + s + "'");
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string projection_name(int layer, Projection p) {
  return "layers." + std::to_string(layer) + (p == Projection::kQuery ? ".attn.wq" : ".attn.wv");
}

ModelState init_base(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelState s;
  s.config = c;
  s.rng_seed = seed;
  const double d = c.d_model;
  auto matrix = [&](const std::string& name, int rows, int cols, double stddev) {
    Tensor t(rows, cols);
    fill_normal(t, stddev, seed, name);
    s.base.emplace(name, std::move(t));
  };
  auto norm = [&](const std::string& name) {
    Tensor g(c.d_model);
    std::fill(g.data.begin(), g.data.end(), 1.0);
    s.base.emplace(name + ".gain", std::move(g));
    s.base.emplace(name + ".bias", Tensor(c.d_model));
  };
  // Fan-in scaled so every sublayer contributes O(1) to the residual stream
  // and the untrained logits have unit spread.
  matrix("tok_emb", c.vocab_size, c.d_model, 1.0);
  matrix("pos_emb", c.max_seq_len, c.d_model, 0.5);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    norm(p + "ln1");
    norm(p + "ln2");
    matrix(p + "attn.wq", c.d_model, c.d_model, 1.0 / std::sqrt(d));
    matrix(p + "attn.wk", c.d_model, c.d_model, 1.0 / std::sqrt(d));
    matrix(p + "attn.wv", c.d_model, c.d_model, 1.0 / std::sqrt(d));
    matrix(p + "attn.wo", c.d_model, c.d_model, 1.0 / std::sqrt(d));
    matrix(p + "mlp.w1", c.d_ff, c.d_model, 1.0 / std::sqrt(d));
    matrix(p + "mlp.w2", c.d_model, c.d_ff, 1.0 / std::sqrt(static_cast<double>(c.d_ff)));
  }
  norm("ln_f");
  matrix("head", c.vocab_size, c.d_model, 1.0 / std::sqrt(d));
  return s;
}

void attach_adapters(ModelState& s, std::uint64_t seed) {
  if (!s.adapters.empty()) throw StateError("adapters already attached");
  const auto& c = s.config;
  for (int l = 0; l < c.n_layers; ++l) {
    for (auto p : c.lora_targets) {
      const std::string name = projection_name(l, p);
      const Tensor& w = require(s, name);
      Adapter ad{Tensor(c.lora_rank, w.cols()), Tensor(w.rows(), c.lora_rank)};
      fill_normal(ad.a, kAdapterInitStd, seed, name + ".lora_a");
      s.adapters.emplace(name, std::move(ad));
    }
  }
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelState s = init_base(config, seed);
  attach_adapters(s, mix_seed(seed, 1));
  return s;
}

Tensor effective_weight_scaled(const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                               const std::string& projection) {
  if (w.shape.size() != 2 || a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != w.cols() ||
      b.rows() != w.rows() || b.cols() != a.rows()) {
    throw DimensionError("adapter shapes do not conform to " + projection + ": W " +
                         std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", A " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ", B " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor out = w;
  Eigen::Map<Mat<double>>(out.data.data(), w.rows(), w.cols()) +=
      scale * (to_mat<double>(b) * to_mat<double>(a));
  return out;
}

Tensor effective_weight(const Tensor& w, const Tensor& a, const Tensor& b, double alpha, int rank,
                        const std::string& projection) {
  if (rank <= 0) throw DimensionError("rank must be positive for " + projection);
  return effective_weight_scaled(w, a, b, alpha / rank, projection);
}

Logits forward(const ModelState& state, std::span<const TokenId> ids, Mode mode) {
  return forward(state, ids, RunOptions{mode, Precision::kFloat64, state.rng_seed});
}

Logits forward(const ModelState& state, std::span<const TokenId> ids, const RunOptions& opts) {
  check_input(state.config, ids);
  if (opts.precision == Precision::kFloat32) return forward_impl<float>(state, ids, opts);
  return forward_impl<double>(state, ids, opts);
}

double nll_loss(const Logits& logits, std::span<const TokenId> targets, const std::vector<bool>& loss_mask) {
  return loss_and_grad(logits, targets, loss_mask, nullptr);
}

LossAndGradients backward(const ModelState& state, std::span<const TokenId> ids,
                          std::span<const TokenId> targets, const std::vector<bool>& loss_mask,
                          const RunOptions& opts) {
  check_input(state.config, ids);
  if (opts.precision == Precision::kFloat32) return backward_impl<float>(state, ids, targets, loss_mask, opts);
  return backward_impl<double>(state, ids, targets, loss_mask, opts);
}

ModelState merge_adapters(const ModelState& state) {
  if (state.adapters.empty()) throw StateError("model has no adapters to merge");
  ModelState merged;
  merged.config = state.config;
  merged.rng_seed = state.rng_seed;
  merged.base = state.base;
  const double scale = state.config.lora_scale();
  for (const auto& [name, ad] : state.adapters) {
    Tensor& w = merged.base.at(name);
    w = effective_weight_scaled(w, ad.a, ad.b, scale, name);
  }
  return merged;
}

Logits softmax_rows(const Logits& logits) {
  Logits p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    p.row(t) = (logits.row(t).array() - mx).exp().matrix();
    p.row(t) /= p.row(t).sum();
  }
  return p;
}

}  // namespace helioqa::microlm
