#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gsr/model.hpp"
#include "gsr/rng.hpp"

using namespace gsr::model;
using gsr::Tensor;

namespace {

ModelConfig small_config(int num_items = 6, int d = 4, int n = 5, int layers = 1) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.n = n;
  cfg.num_layers = layers;
  cfg.dropout_rate = 0.0f;
  cfg.num_items = num_items;
  return cfg;
}

void randomize(ModelParams& params, std::mt19937& rng, float scale = 0.5f) {
  params.for_each([&](const std::string&, Tensor& t, bool frozen) {
    std::uniform_real_distribution<float> dist(-scale, scale);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = dist(rng);
    }
    if (frozen) {
      for (int c = 0; c < t.cols(); ++c) {
        t(0, c) = 0.0f;
      }
    }
  });
}

}  // namespace

TEST_CASE("initialization pins the padding row and names every tensor") {
  const ModelConfig cfg = small_config(10, 8, 6, 2);
  const ModelParams params = ModelParams::init(cfg, 7);
  CHECK(params.num_tensors() == 4 + 11 * 4);
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(params.item_mean(0, c) == 0.0f);
    CHECK(params.item_cov(0, c) == 0.0f);
  }
  int count = 0;
  params.for_each([&](const std::string& name, const Tensor& t, bool frozen) {
    CHECK(!name.empty());
    CHECK(t.size() > 0);
    CHECK(t.all_finite());
    if (frozen) {
      CHECK((name == "item_mean" || name == "item_cov"));
    }
    ++count;
  });
  CHECK(count == static_cast<int>(params.num_tensors()));

  // same seed, same parameters; different seed, different parameters
  const ModelParams again = ModelParams::init(cfg, 7);
  const ModelParams other = ModelParams::init(cfg, 8);
  CHECK(again.item_mean(1, 0) == params.item_mean(1, 0));
  CHECK(other.item_mean(1, 0) != params.item_mean(1, 0));
}

TEST_CASE("embed_sequence is the additive lookup of Eq-style tables") {
  const ModelConfig cfg = small_config();
  std::mt19937 rng(5);
  ModelParams params = ModelParams::init(cfg, 1);
  randomize(params, rng);

  // all-padding input: mean rows equal the positional table exactly
  const std::vector<int> padding(static_cast<std::size_t>(cfg.n), 0);
  const auto [mean_pad, cov_pad] = embed_sequence(params, cfg, padding);
  for (int t = 0; t < cfg.n; ++t) {
    for (int c = 0; c < cfg.d; ++c) {
      CHECK(mean_pad(t, c) == params.pos_mean(t, c));
      CHECK(cov_pad(t, c) == params.pos_cov(t, c));
    }
  }

  // single item at the last position: last row = e_item + p_last
  std::vector<int> single = padding;
  single.back() = 3;
  const auto [mean_single, cov_single] = embed_sequence(params, cfg, single);
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(mean_single(cfg.n - 1, c) ==
          params.item_mean(3, c) + params.pos_mean(cfg.n - 1, c));
  }

  // two items at the same position differ by their embedding difference only
  std::vector<int> seq_a = padding, seq_b = padding;
  seq_a[2] = 1;
  seq_b[2] = 2;
  const auto ma = embed_sequence(params, cfg, seq_a).first;
  const auto mb = embed_sequence(params, cfg, seq_b).first;
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(ma(2, c) - mb(2, c) ==
          doctest::Approx(params.item_mean(1, c) - params.item_mean(2, c)).epsilon(1e-6));
  }

  std::vector<int> bad = padding;
  bad[0] = cfg.num_items + 1;
  CHECK_THROWS_AS(embed_sequence(params, cfg, bad), std::out_of_range);
}

TEST_CASE("covariance_output is elu + 1 and strictly positive") {
  const Tensor zero = covariance_output(Tensor::zeros(2, 3));
  for (std::size_t i = 0; i < zero.size(); ++i) {
    CHECK(zero[i] == 1.0f);
  }
  Tensor o(1, 3);
  o[0] = 2.0f;
  o[1] = -10.0f;
  o[2] = -120.0f;
  const Tensor out = covariance_output(o);
  CHECK(out[0] == 3.0f);
  CHECK(out[1] == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK(out[2] > 0.0f);
}

TEST_CASE("item_distribution uses the tables directly") {
  const ModelConfig cfg = small_config();
  ModelParams params = ModelParams::init(cfg, 3);
  // zero covariance row -> unit covariance
  for (int c = 0; c < cfg.d; ++c) {
    params.item_cov(2, c) = 0.0f;
  }
  const GaussianParams g = item_distribution(params, 2);
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(g.mean[static_cast<std::size_t>(c)] == params.item_mean(2, c));
    CHECK(g.cov_diag[static_cast<std::size_t>(c)] == 1.0f);
  }

  std::mt19937 rng(11);
  randomize(params, rng, 3.0f);
  for (int item = 1; item <= cfg.num_items; ++item) {
    for (float v : item_distribution(params, item).cov_diag) {
      CHECK(v > 0.0f);
    }
  }

  // equal rows give identical distributions
  for (int c = 0; c < cfg.d; ++c) {
    params.item_mean(4, c) = params.item_mean(5, c);
    params.item_cov(4, c) = params.item_cov(5, c);
  }
  const GaussianParams g4 = item_distribution(params, 4);
  const GaussianParams g5 = item_distribution(params, 5);
  CHECK(g4.mean == g5.mean);
  CHECK(g4.cov_diag == g5.cov_diag);

  CHECK_THROWS_AS(item_distribution(params, 0), std::out_of_range);
  CHECK_THROWS_AS(item_distribution(params, cfg.num_items + 1), std::out_of_range);
}

TEST_CASE("dsa_forward handles singleton and identical-row inputs") {
  const ModelConfig cfg = small_config(6, 4, 1);
  std::mt19937 rng(13);
  ModelParams params = ModelParams::init(cfg, 2);
  randomize(params, rng);

  // n = 1: the only key gets weight 1, output = elu(x W_v)
  const Tensor x1 = Tensor::from_rows({{0.3f, -0.8f, 1.2f, 0.05f}});
  const Tensor allowed1 = Tensor::full(1, 1, 1.0f);
  Tensor attn;
  const Tensor out1 = dsa_forward(params, cfg, Tower::mean, x1, allowed1, 0, &attn);
  CHECK(attn(0, 0) == 1.0f);
  const Tensor expected1 = gsr::elu(gsr::matmul(x1, params.mean_tower.layers[0].attn_value));
  for (std::size_t i = 0; i < out1.size(); ++i) {
    CHECK(out1[i] == doctest::Approx(expected1[i]).epsilon(1e-6));
  }

  // identical rows, no padding: every output row is a convex combination of
  // identical values, i.e. equal to elu(x W_v)'s row
  const ModelConfig cfg4 = small_config(6, 4, 4);
  ModelParams params4 = ModelParams::init(cfg4, 2);
  randomize(params4, rng);
  Tensor same(4, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      same(r, c) = x1(0, c);
    }
  }
  const std::vector<int> ids{1, 1, 1, 1};
  const Tensor out =
      dsa_forward(params4, cfg4, Tower::cov, same, attention_mask(ids), 0, nullptr);
  const Tensor value_rows =
      gsr::elu(gsr::matmul(same, params4.cov_tower.layers[0].attn_value));
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(out(r, c) == doctest::Approx(value_rows(0, c)).epsilon(1e-5));
    }
  }
}

TEST_CASE("attention weights to future and padding positions are exactly zero") {
  const ModelConfig cfg = small_config(6, 4, 6, 2);
  std::mt19937 rng(17);
  ModelParams params = ModelParams::init(cfg, 4);
  randomize(params, rng);

  const std::vector<int> ids{0, 0, 3, 1, 4, 2};  // two padding positions
  EncodeTrace trace;
  encode(params, cfg, ids, Mode::infer, 0, &trace);
  REQUIRE(trace.mean_attention.size() == 2);
  REQUIRE(trace.cov_attention.size() == 2);
  for (const auto& layers : {trace.mean_attention, trace.cov_attention}) {
    for (const Tensor& attn : layers) {
      for (int q = 0; q < cfg.n; ++q) {
        for (int k = 0; k < cfg.n; ++k) {
          if (k > q || ids[static_cast<std::size_t>(k)] == 0) {
            CHECK(attn(q, k) == 0.0f);
          }
        }
        // weight from position 1 to position 3 in particular
        CHECK(attn(1, 3) == 0.0f);
      }
    }
  }
}

TEST_CASE("encode is deterministic in infer mode and causal") {
  const ModelConfig cfg = small_config(8, 4, 6, 2);
  std::mt19937 rng(19);
  ModelParams params = ModelParams::init(cfg, 5);
  randomize(params, rng);

  const std::vector<int> ids{0, 2, 5, 1, 7, 3};
  const auto a = encode(params, cfg, ids, Mode::infer);
  const auto b = encode(params, cfg, ids, Mode::infer, 999);
  REQUIRE(a.size() == static_cast<std::size_t>(cfg.n));
  for (int t = 0; t < cfg.n; ++t) {
    CHECK(a[static_cast<std::size_t>(t)].mean == b[static_cast<std::size_t>(t)].mean);
    CHECK(a[static_cast<std::size_t>(t)].cov_diag == b[static_cast<std::size_t>(t)].cov_diag);
  }

  // changing items after position t leaves outputs at positions <= t unchanged
  for (int t = 0; t < cfg.n - 1; ++t) {
    std::vector<int> perturbed = ids;
    for (int s = t + 1; s < cfg.n; ++s) {
      perturbed[static_cast<std::size_t>(s)] =
          1 + (ids[static_cast<std::size_t>(s)] + 3) % cfg.num_items;
    }
    const auto c = encode(params, cfg, perturbed, Mode::infer);
    for (int s = 0; s <= t; ++s) {
      CHECK(c[static_cast<std::size_t>(s)].mean == a[static_cast<std::size_t>(s)].mean);
      CHECK(c[static_cast<std::size_t>(s)].cov_diag ==
            a[static_cast<std::size_t>(s)].cov_diag);
    }
  }
}

TEST_CASE("train-mode dropout is reproducible per seed") {
  ModelConfig cfg = small_config(8, 4, 6, 1);
  cfg.dropout_rate = 0.3f;
  ModelParams params = ModelParams::init(cfg, 21);
  const std::vector<int> ids{0, 1, 2, 3, 4, 5};
  const auto a = encode(params, cfg, ids, Mode::train, 42);
  const auto b = encode(params, cfg, ids, Mode::train, 42);
  const auto c = encode(params, cfg, ids, Mode::train, 43);
  bool same_seed_equal = true, diff_seed_equal = true;
  for (int t = 0; t < cfg.n; ++t) {
    same_seed_equal =
        same_seed_equal && a[static_cast<std::size_t>(t)].mean == b[static_cast<std::size_t>(t)].mean;
    diff_seed_equal =
        diff_seed_equal && a[static_cast<std::size_t>(t)].mean == c[static_cast<std::size_t>(t)].mean;
  }
  CHECK(same_seed_equal);
  CHECK_FALSE(diff_seed_equal);
}

TEST_CASE("positive-definiteness and finiteness under random parameter sweeps") {
  const ModelConfig cfg = small_config(9, 4, 5, 2);
  std::mt19937 rng(23);
  std::uniform_int_distribution<int> item(0, cfg.num_items);
  for (int trial = 0; trial < 200; ++trial) {
    ModelParams params = ModelParams::init(cfg, static_cast<std::uint64_t>(trial));
    std::vector<int> ids(static_cast<std::size_t>(cfg.n));
    for (int t = 0; t < cfg.n; ++t) {
      ids[static_cast<std::size_t>(t)] = item(rng);
    }
    const auto out = encode(params, cfg, ids, Mode::infer);
    for (const GaussianParams& g : out) {
      for (float v : g.cov_diag) {
        CHECK(v > 0.0f);
        CHECK(std::isfinite(v));
      }
      for (float v : g.mean) {
        CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("outputs stay finite with parameters as large as 10") {
  const ModelConfig cfg = small_config(6, 4, 5, 2);
  std::mt19937 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams params = ModelParams::init(cfg, 1);
    randomize(params, rng, 10.0f);
    const std::vector<int> ids{2, 4, 1, 6, 3};
    const auto out = encode(params, cfg, ids, Mode::infer);
    for (const GaussianParams& g : out) {
      for (float v : g.mean) {
        CHECK(std::isfinite(v));
      }
      for (float v : g.cov_diag) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0f);
      }
    }
  }
}

TEST_CASE("the two towers share no parameters") {
  const ModelConfig cfg = small_config(7, 4, 5, 1);
  ModelParams params = ModelParams::init(cfg, 31);
  const std::vector<int> ids{0, 1, 2, 3, 4};
  const auto before = encode(params, cfg, ids, Mode::infer);

  ModelParams cov_bumped = params;
  for (std::size_t i = 0; i < cov_bumped.item_cov.size(); ++i) {
    cov_bumped.item_cov[i] += 0.37f;
  }
  cov_bumped.pos_cov(0, 0) -= 1.0f;
  const auto after_cov = encode(cov_bumped, cfg, ids, Mode::infer);
  for (int t = 0; t < cfg.n; ++t) {
    CHECK(after_cov[static_cast<std::size_t>(t)].mean ==
          before[static_cast<std::size_t>(t)].mean);
  }

  ModelParams mean_bumped = params;
  for (std::size_t i = 0; i < mean_bumped.item_mean.size(); ++i) {
    mean_bumped.item_mean[i] -= 0.21f;
  }
  const auto after_mean = encode(mean_bumped, cfg, ids, Mode::infer);
  for (int t = 0; t < cfg.n; ++t) {
    CHECK(after_mean[static_cast<std::size_t>(t)].cov_diag ==
          before[static_cast<std::size_t>(t)].cov_diag);
  }
}

TEST_CASE("ffn_forward closed-form cases and position independence") {
  const ModelConfig cfg = small_config(6, 3, 4, 1);
  ModelParams params = ModelParams::init(cfg, 37);
  auto& layer = params.mean_tower.layers[0];

  // identity weights, zero biases, non-negative input -> identity
  layer.ffn_w1 = Tensor::zeros(3, 3);
  layer.ffn_w2 = Tensor::zeros(3, 3);
  for (int i = 0; i < 3; ++i) {
    layer.ffn_w1(i, i) = 1.0f;
    layer.ffn_w2(i, i) = 1.0f;
  }
  layer.ffn_b1 = Tensor::zeros(1, 3);
  layer.ffn_b2 = Tensor::zeros(1, 3);
  const Tensor x = Tensor::from_rows({{0.5f, 0.0f, 2.0f}, {1.5f, 0.25f, 0.75f}});
  const Tensor id_out = ffn_forward(params, cfg, Tower::mean, x, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(id_out[i] == doctest::Approx(x[i]).epsilon(1e-6));
  }

  // zero input, b1 = 0, b2 = c < 0 -> exp(c) - 1 everywhere
  layer.ffn_b2 = Tensor::full(1, 3, -0.5f);
  const Tensor zero_out = ffn_forward(params, cfg, Tower::mean, Tensor::zeros(2, 3), 0);
  for (std::size_t i = 0; i < zero_out.size(); ++i) {
    CHECK(zero_out[i] == doctest::Approx(std::expm1(-0.5)).epsilon(1e-6));
  }

  // permuting rows permutes outputs identically
  std::mt19937 rng(39);
  ModelParams rparams = ModelParams::init(cfg, 41);
  randomize(rparams, rng);
  Tensor rows(3, 3);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i] = dist(rng);
  }
  const Tensor fwd = ffn_forward(rparams, cfg, Tower::cov, rows, 0);
  Tensor swapped = rows;
  for (int c = 0; c < 3; ++c) {
    std::swap(swapped(0, c), swapped(2, c));
  }
  const Tensor fwd_swapped = ffn_forward(rparams, cfg, Tower::cov, swapped, 0);
  for (int c = 0; c < 3; ++c) {
    CHECK(fwd_swapped(0, c) == fwd(2, c));
    CHECK(fwd_swapped(2, c) == fwd(0, c));
    CHECK(fwd_swapped(1, c) == fwd(1, c));
  }
}
