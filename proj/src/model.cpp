#include "gsr/model.hpp"

#include <cmath>
#include <stdexcept>

#include "gsr/rng.hpp"

namespace gsr::model {

void ModelConfig::validate() const {
  if (d < 1 || n < 1 || num_layers < 1) {
    throw std::invalid_argument("ModelConfig: d, n and layers must all be >= 1");
  }
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f) {
    throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
  }
  if (num_items < 1) {
    throw std::invalid_argument("ModelConfig: num_items must be >= 1");
  }
}

namespace {

constexpr float kInitStddev = 0.02f;

LayerParams init_layer(int d, std::mt19937& rng) {
  LayerParams layer;
  layer.attn_query = Tensor::randn(d, d, kInitStddev, rng);
  layer.attn_key = Tensor::randn(d, d, kInitStddev, rng);
  layer.attn_value = Tensor::randn(d, d, kInitStddev, rng);
  layer.ffn_w1 = Tensor::randn(d, d, kInitStddev, rng);
  layer.ffn_w2 = Tensor::randn(d, d, kInitStddev, rng);
  layer.ffn_b1 = Tensor(1, d);
  layer.ffn_b2 = Tensor(1, d);
  layer.norm1_gain = Tensor::full(1, d, 1.0f);
  layer.norm1_bias = Tensor(1, d);
  layer.norm2_gain = Tensor::full(1, d, 1.0f);
  layer.norm2_bias = Tensor(1, d);
  return layer;
}

void zero_row(Tensor& t, int row) {
  for (int c = 0; c < t.cols(); ++c) {
    t(row, c) = 0.0f;
  }
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937 rng = make_engine(mix_seed(seed, {0x6d6f64656cULL}));
  ModelParams p;
  p.item_mean = Tensor::randn(cfg.num_items + 1, cfg.d, kInitStddev, rng);
  p.item_cov = Tensor::randn(cfg.num_items + 1, cfg.d, kInitStddev, rng);
  zero_row(p.item_mean, 0);
  zero_row(p.item_cov, 0);
  p.pos_mean = Tensor::randn(cfg.n, cfg.d, kInitStddev, rng);
  p.pos_cov = Tensor::randn(cfg.n, cfg.d, kInitStddev, rng);
  for (int l = 0; l < cfg.num_layers; ++l) {
    p.mean_tower.layers.push_back(init_layer(cfg.d, rng));
  }
  for (int l = 0; l < cfg.num_layers; ++l) {
    p.cov_tower.layers.push_back(init_layer(cfg.d, rng));
  }
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("item_mean", p.item_mean, true);
  fn("item_cov", p.item_cov, true);
  fn("pos_mean", p.pos_mean, false);
  fn("pos_cov", p.pos_cov, false);
  const char* towers[2] = {"mean", "cov"};
  for (int t = 0; t < 2; ++t) {
    auto& tower = t == 0 ? p.mean_tower : p.cov_tower;
    for (std::size_t l = 0; l < tower.layers.size(); ++l) {
      auto& layer = tower.layers[l];
      const std::string prefix = std::string(towers[t]) + "." + std::to_string(l) + ".";
      fn(prefix + "attn_query", layer.attn_query, false);
      fn(prefix + "attn_key", layer.attn_key, false);
      fn(prefix + "attn_value", layer.attn_value, false);
      fn(prefix + "ffn_w1", layer.ffn_w1, false);
      fn(prefix + "ffn_b1", layer.ffn_b1, false);
      fn(prefix + "ffn_w2", layer.ffn_w2, false);
      fn(prefix + "ffn_b2", layer.ffn_b2, false);
      fn(prefix + "norm1_gain", layer.norm1_gain, false);
      fn(prefix + "norm1_bias", layer.norm1_bias, false);
      fn(prefix + "norm2_gain", layer.norm2_gain, false);
      fn(prefix + "norm2_bias", layer.norm2_bias, false);
    }
  }
}

}  // namespace

void ModelParams::for_each(const Visitor& fn) { visit_params(*this, fn); }

void ModelParams::for_each(const ConstVisitor& fn) const { visit_params(*this, fn); }

std::size_t ModelParams::num_tensors() const {
  return 4 + 11 * (mean_tower.layers.size() + cov_tower.layers.size());
}

Tensor attention_mask(std::span<const int> ids) {
  const int n = static_cast<int>(ids.size());
  Tensor allowed(n, n);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k <= q; ++k) {
      if (ids[static_cast<std::size_t>(k)] != 0) {
        allowed(q, k) = 1.0f;
      }
    }
  }
  return allowed;
}

std::pair<Tensor, Tensor> embed_sequence(const ModelParams& params, const ModelConfig& cfg,
                                         std::span<const int> ids) {
  if (static_cast<int>(ids.size()) != cfg.n) {
    throw std::invalid_argument("embed_sequence: sequence must have length n");
  }
  Tensor mean_seq(cfg.n, cfg.d);
  Tensor cov_seq(cfg.n, cfg.d);
  for (int t = 0; t < cfg.n; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id > cfg.num_items) {
      throw std::out_of_range("embed_sequence: item id out of range");
    }
    for (int c = 0; c < cfg.d; ++c) {
      mean_seq(t, c) = params.item_mean(id, c) + params.pos_mean(t, c);
      cov_seq(t, c) = params.item_cov(id, c) + params.pos_cov(t, c);
    }
  }
  return {std::move(mean_seq), std::move(cov_seq)};
}

Tensor covariance_output(const Tensor& o) { return elu_plus_one(o); }

Tensor dsa_forward(const ModelParams& params, const ModelConfig& cfg, Tower tower,
                   const Tensor& x, const Tensor& allowed, int layer, Tensor* attention_out) {
  const auto& layers = tower == Tower::mean ? params.mean_tower.layers : params.cov_tower.layers;
  const LayerParams& lp = layers.at(static_cast<std::size_t>(layer));
  const Tensor q = elu(matmul(x, lp.attn_query));
  const Tensor k = elu(matmul(x, lp.attn_key));
  const Tensor v = elu(matmul(x, lp.attn_value));
  Tensor scores = matmul_nt(q, k);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg.d));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] *= inv_sqrt_d;
  }
  const Tensor weights = softmax_rows(scores, allowed);
  if (attention_out != nullptr) {
    *attention_out = weights;
  }
  return matmul(weights, v);
}

Tensor ffn_forward(const ModelParams& params, const ModelConfig& cfg, Tower tower,
                   const Tensor& x, int layer) {
  (void)cfg;
  const auto& layers = tower == Tower::mean ? params.mean_tower.layers : params.cov_tower.layers;
  const LayerParams& lp = layers.at(static_cast<std::size_t>(layer));
  Tensor h = matmul(x, lp.ffn_w1);
  for (int r = 0; r < h.rows(); ++r) {
    for (int c = 0; c < h.cols(); ++c) {
      h(r, c) += lp.ffn_b1[static_cast<std::size_t>(c)];
    }
  }
  h = elu(h);
  Tensor out = matmul(h, lp.ffn_w2);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) {
      out(r, c) += lp.ffn_b2[static_cast<std::size_t>(c)];
    }
  }
  return elu(out);
}

BoundParams bind(Tape& tape, ModelParams& params) {
  BoundParams bound;
  params.for_each([&](const std::string& name, Tensor& t, bool frozen) {
    bound.vars.push_back(tape.leaf(t));
    bound.names.push_back(name);
    bound.frozen_row0.push_back(frozen);
    bound.tensors.push_back(&t);
  });
  bound.item_mean = bound.vars[0];
  bound.item_cov = bound.vars[1];
  bound.pos_mean = bound.vars[2];
  bound.pos_cov = bound.vars[3];
  const std::size_t num_layers = params.mean_tower.layers.size();
  auto layer_vars = [&](std::size_t base, std::size_t l) {
    const std::size_t at = base + l * 11;
    BoundParams::LayerVars lv;
    lv.attn_query = bound.vars[at + 0];
    lv.attn_key = bound.vars[at + 1];
    lv.attn_value = bound.vars[at + 2];
    lv.ffn_w1 = bound.vars[at + 3];
    lv.ffn_b1 = bound.vars[at + 4];
    lv.ffn_w2 = bound.vars[at + 5];
    lv.ffn_b2 = bound.vars[at + 6];
    lv.norm1_gain = bound.vars[at + 7];
    lv.norm1_bias = bound.vars[at + 8];
    lv.norm2_gain = bound.vars[at + 9];
    lv.norm2_bias = bound.vars[at + 10];
    return lv;
  };
  for (std::size_t l = 0; l < num_layers; ++l) {
    bound.mean_layers.push_back(layer_vars(4, l));
  }
  for (std::size_t l = 0; l < num_layers; ++l) {
    bound.cov_layers.push_back(layer_vars(4 + num_layers * 11, l));
  }
  return bound;
}

namespace {

Var run_tower(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
              const std::vector<BoundParams::LayerVars>& layers, Var item_table, Var pos_table,
              const std::vector<int>& ids, const Tensor& allowed, Mode mode,
              std::mt19937& dropout_rng, std::vector<Tensor>* attention_trace) {
  (void)bound;
  const bool drop = mode == Mode::train && cfg.dropout_rate > 0.0f;
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg.d));

  Var x = tape.add(tape.gather_rows(item_table, ids), pos_table);
  if (drop) {
    x = tape.dropout(x, cfg.dropout_rate, dropout_rng);
  }
  for (const auto& lv : layers) {
    Var q = tape.elu(tape.matmul(x, lv.attn_query));
    Var k = tape.elu(tape.matmul(x, lv.attn_key));
    Var v = tape.elu(tape.matmul(x, lv.attn_value));
    Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), inv_sqrt_d), allowed);
    if (attention_trace != nullptr) {
      attention_trace->push_back(tape.value(weights));
    }
    Var attended = tape.matmul(weights, v);
    if (drop) {
      attended = tape.dropout(attended, cfg.dropout_rate, dropout_rng);
    }
    Var x1 = tape.layer_norm(tape.add(x, attended), lv.norm1_gain, lv.norm1_bias,
                             ModelConfig::layer_norm_eps);
    Var h = tape.elu(tape.add_row(tape.matmul(x1, lv.ffn_w1), lv.ffn_b1));
    Var f = tape.elu(tape.add_row(tape.matmul(h, lv.ffn_w2), lv.ffn_b2));
    if (drop) {
      f = tape.dropout(f, cfg.dropout_rate, dropout_rng);
    }
    x = tape.layer_norm(tape.add(x1, f), lv.norm2_gain, lv.norm2_bias,
                        ModelConfig::layer_norm_eps);
  }
  return x;
}

}  // namespace

SequenceDistributions encode_on_tape(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
                                     std::span<const int> ids, Mode mode,
                                     std::mt19937& dropout_rng, EncodeTrace* trace) {
  if (static_cast<int>(ids.size()) != cfg.n) {
    throw std::invalid_argument("encode: sequence must have length n");
  }
  std::vector<int> id_vec(ids.begin(), ids.end());
  for (int id : id_vec) {
    if (id < 0 || id > cfg.num_items) {
      throw std::out_of_range("encode: item id out of range");
    }
  }
  const Tensor allowed = attention_mask(ids);

  SequenceDistributions out;
  out.mean = run_tower(tape, bound, cfg, bound.mean_layers, bound.item_mean, bound.pos_mean,
                       id_vec, allowed, mode, dropout_rng,
                       trace != nullptr ? &trace->mean_attention : nullptr);
  Var cov_raw = run_tower(tape, bound, cfg, bound.cov_layers, bound.item_cov, bound.pos_cov,
                          id_vec, allowed, mode, dropout_rng,
                          trace != nullptr ? &trace->cov_attention : nullptr);
  out.cov = tape.elu_plus_one(cov_raw);
  return out;
}

std::vector<GaussianParams> encode(const ModelParams& params, const ModelConfig& cfg,
                                   std::span<const int> ids, Mode mode,
                                   std::uint64_t dropout_seed, EncodeTrace* trace) {
  Tape tape(false);
  // bind() needs mutable params only to keep pointers for the optimizer path.
  BoundParams bound = bind(tape, const_cast<ModelParams&>(params));
  std::mt19937 rng = make_engine(dropout_seed);
  const SequenceDistributions dist =
      encode_on_tape(tape, bound, cfg, ids, mode, rng, trace);
  const Tensor& mean = tape.value(dist.mean);
  const Tensor& cov = tape.value(dist.cov);
  std::vector<GaussianParams> result(static_cast<std::size_t>(cfg.n));
  for (int t = 0; t < cfg.n; ++t) {
    result[static_cast<std::size_t>(t)].mean = mean.row_vec(t);
    result[static_cast<std::size_t>(t)].cov_diag = cov.row_vec(t);
  }
  return result;
}

GaussianParams item_distribution(const ModelParams& params, int item_id) {
  if (item_id < 1 || item_id >= params.item_mean.rows()) {
    throw std::out_of_range("item_distribution: item id out of range");
  }
  GaussianParams g;
  g.mean = params.item_mean.row_vec(item_id);
  g.cov_diag.resize(static_cast<std::size_t>(params.item_cov.cols()));
  for (int c = 0; c < params.item_cov.cols(); ++c) {
    g.cov_diag[static_cast<std::size_t>(c)] = elu_plus_one_scalar(params.item_cov(item_id, c));
  }
  return g;
}

}  // namespace gsr::model
