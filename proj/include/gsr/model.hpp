#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gsr/autograd.hpp"
#include "gsr/tensor.hpp"

namespace gsr::model {

struct ModelConfig {
  int d = 64;
  int n = 50;
  int num_layers = 1;
  float dropout_rate = 0.2f;
  int num_items = 0;

  void validate() const;
  static constexpr float layer_norm_eps = 1e-8f;
};

struct LayerParams {
  Tensor attn_query, attn_key, attn_value;  // d x d
  Tensor ffn_w1, ffn_w2;                    // d x d
  Tensor ffn_b1, ffn_b2;                    // 1 x d
  Tensor norm1_gain, norm1_bias;            // 1 x d
  Tensor norm2_gain, norm2_bias;            // 1 x d
};

struct TowerParams {
  std::vector<LayerParams> layers;
};

/// One item's (or one inferred next-item's) elliptical Gaussian: a mean
/// vector and a strictly positive diagonal covariance.
struct GaussianParams {
  std::vector<float> mean;
  std::vector<float> cov_diag;
};

/// All learnable tensors. Row 0 of both item tables is the padding row: it is
/// pinned to zero, excluded from optimizer updates and from the regularizer.
struct ModelParams {
  Tensor item_mean, item_cov;  // (num_items + 1) x d
  Tensor pos_mean, pos_cov;    // n x d
  TowerParams mean_tower, cov_tower;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  using Visitor = std::function<void(const std::string&, Tensor&, bool frozen_row0)>;
  using ConstVisitor = std::function<void(const std::string&, const Tensor&, bool frozen_row0)>;
  void for_each(const Visitor& fn);
  void for_each(const ConstVisitor& fn) const;
  std::size_t num_tensors() const;
};

enum class Mode { train, infer };
enum class Tower { mean, cov };

/// Attention admissibility for a padded sequence: position q may attend to
/// position k iff k <= q and ids[k] is not padding.
Tensor attention_mask(std::span<const int> ids);

/// Eq-style embedding lookup: row t is E[id_t] + P[t] per tower.
std::pair<Tensor, Tensor> embed_sequence(const ModelParams& params, const ModelConfig& cfg,
                                         std::span<const int> ids);

/// Positive-definite covariance output: elu(o) + 1 elementwise, evaluated in
/// fused form so every entry stays strictly positive.
Tensor covariance_output(const Tensor& o);

/// Single distribution self-attention block evaluated without gradients;
/// optionally captures the attention weight matrix.
Tensor dsa_forward(const ModelParams& params, const ModelConfig& cfg, Tower tower,
                   const Tensor& x, const Tensor& allowed, int layer,
                   Tensor* attention_out = nullptr);

/// Position-wise feed-forward block: elu(elu(x W1 + b1) W2 + b2).
Tensor ffn_forward(const ModelParams& params, const ModelConfig& cfg, Tower tower,
                   const Tensor& x, int layer);

/// Per-layer attention matrices captured during encode (infer-mode tests).
struct EncodeTrace {
  std::vector<Tensor> mean_attention;
  std::vector<Tensor> cov_attention;
};

/// Leaf bindings of every parameter on a tape, in checkpoint order.
struct BoundParams {
  std::vector<Var> vars;
  std::vector<std::string> names;
  std::vector<bool> frozen_row0;
  std::vector<Tensor*> tensors;

  Var item_mean, item_cov, pos_mean, pos_cov;
  struct LayerVars {
    Var attn_query, attn_key, attn_value;
    Var ffn_w1, ffn_w2, ffn_b1, ffn_b2;
    Var norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  };
  std::vector<LayerVars> mean_layers, cov_layers;
};

BoundParams bind(Tape& tape, ModelParams& params);

struct SequenceDistributions {
  Var mean;  // n x d
  Var cov;   // n x d, strictly positive
};

/// Full twin-tower forward for one padded sequence on a tape. Position t's
/// output row is the inferred distribution of the item at step t + 1.
SequenceDistributions encode_on_tape(Tape& tape, const BoundParams& bound,
                                     const ModelConfig& cfg, std::span<const int> ids,
                                     Mode mode, std::mt19937& dropout_rng,
                                     EncodeTrace* trace = nullptr);

/// Gradient-free encode; returns one GaussianParams per position.
std::vector<GaussianParams> encode(const ModelParams& params, const ModelConfig& cfg,
                                   std::span<const int> ids, Mode mode,
                                   std::uint64_t dropout_seed = 0, EncodeTrace* trace = nullptr);

/// Item embedding as a distribution: mean row plus elu+1 of the covariance row.
GaussianParams item_distribution(const ModelParams& params, int item_id);

}  // namespace gsr::model
