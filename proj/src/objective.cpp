#include "gsr/objective.hpp"

#include <cmath>
#include <stdexcept>

#include "gsr/errors.hpp"
#include "gsr/rng.hpp"

namespace gsr::objective {

double wasserstein2_diag(const model::GaussianParams& a, const model::GaussianParams& b) {
  if (a.mean.size() != b.mean.size() || a.cov_diag.size() != b.cov_diag.size() ||
      a.mean.size() != a.cov_diag.size()) {
    throw std::invalid_argument("wasserstein2_diag: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.mean.size(); ++k) {
    if (a.cov_diag[k] <= 0.0f || b.cov_diag[k] <= 0.0f) {
      throw std::domain_error("wasserstein2_diag: covariance entries must be positive");
    }
    const double dm = static_cast<double>(a.mean[k]) - b.mean[k];
    const double ds = std::sqrt(static_cast<double>(a.cov_diag[k])) -
                      std::sqrt(static_cast<double>(b.cov_diag[k]));
    acc += dm * dm + ds * ds;
  }
  return acc;
}

double bpr_position_loss(const model::GaussianParams& pred, const model::GaussianParams& pos,
                         const model::GaussianParams& neg) {
  const double margin = wasserstein2_diag(neg, pred) - wasserstein2_diag(pos, pred);
  // -log sigmoid(m) == softplus(-m), evaluated stably.
  const double m = -margin;
  return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

namespace {

// sum_k (mu_a - mu_b)^2 + (sqrt(cov_a) - sqrt(cov_b))^2 per row -> n x 1.
Var w2_rows(Tape& tape, Var mean_a, Var cov_a, Var mean_b, Var cov_b) {
  const Var mean_term = tape.row_sums(tape.square(tape.sub(mean_a, mean_b)));
  const Var cov_term =
      tape.row_sums(tape.square(tape.sub(tape.sqrt(cov_a), tape.sqrt(cov_b))));
  return tape.add(mean_term, cov_term);
}

}  // namespace

LossBreakdown batch_loss(Tape& tape, const model::BoundParams& bound,
                         const model::ModelConfig& cfg, const data::SequenceBatch& batch,
                         float lambda, model::Mode mode, std::mt19937& dropout_rng,
                         Var* loss_out) {
  if (lambda < 0.0f) {
    throw std::invalid_argument("batch_loss: lambda must be >= 0");
  }
  const int num_valid = batch.num_valid();
  if (num_valid == 0) {
    throw std::invalid_argument("batch_loss: batch has no valid positions");
  }
  if (batch.seq_len != cfg.n) {
    throw std::invalid_argument("batch_loss: batch length differs from model n");
  }

  Var bpr_sum;
  for (int b = 0; b < batch.batch; ++b) {
    bool any_valid = false;
    for (int t = 0; t < batch.seq_len; ++t) {
      any_valid = any_valid || batch.valid(b, t);
    }
    if (!any_valid) {
      continue;
    }
    const auto row = batch.input_row(b);
    std::vector<int> input_ids(row.begin(), row.end());
    std::vector<int> target_ids(static_cast<std::size_t>(batch.seq_len));
    std::vector<int> negative_ids(static_cast<std::size_t>(batch.seq_len));
    Tensor mask(batch.seq_len, 1);
    for (int t = 0; t < batch.seq_len; ++t) {
      target_ids[static_cast<std::size_t>(t)] = batch.target(b, t);
      negative_ids[static_cast<std::size_t>(t)] = batch.negative(b, t);
      mask(t, 0) = batch.valid(b, t) ? 1.0f : 0.0f;
    }

    const model::SequenceDistributions pred =
        model::encode_on_tape(tape, bound, cfg, input_ids, mode, dropout_rng);

    const Var pos_mean = tape.gather_rows(bound.item_mean, target_ids);
    const Var pos_cov = tape.elu_plus_one(tape.gather_rows(bound.item_cov, target_ids));
    const Var neg_mean = tape.gather_rows(bound.item_mean, negative_ids);
    const Var neg_cov = tape.elu_plus_one(tape.gather_rows(bound.item_cov, negative_ids));

    const Var d_pos = w2_rows(tape, pred.mean, pred.cov, pos_mean, pos_cov);
    const Var d_neg = w2_rows(tape, pred.mean, pred.cov, neg_mean, neg_cov);
    // -log sigmoid(d_neg - d_pos) == softplus(d_pos - d_neg)
    const Var losses = tape.softplus(tape.sub(d_pos, d_neg));
    const Var masked = tape.sum(tape.mul_mask(losses, mask));
    bpr_sum = bpr_sum.valid() ? tape.add(bpr_sum, masked) : masked;
  }

  const Var bpr_mean = tape.scale(bpr_sum, 1.0f / static_cast<float>(num_valid));

  Var reg;
  for (std::size_t i = 0; i < bound.vars.size(); ++i) {
    const Var sq = tape.sum_squares(bound.vars[i], bound.frozen_row0[i] ? 1 : 0);
    reg = reg.valid() ? tape.add(reg, sq) : sq;
  }
  const Var reg_scaled = tape.scale(reg, lambda);
  const Var total = tape.add(bpr_mean, reg_scaled);

  LossBreakdown out;
  out.bpr_term = static_cast<double>(tape.value(bpr_mean)[0]);
  out.reg_term = static_cast<double>(tape.value(reg_scaled)[0]);
  out.total = static_cast<double>(tape.value(total)[0]);
  out.num_valid_positions = num_valid;
  if (loss_out != nullptr) {
    *loss_out = total;
  }
  return out;
}

LossBreakdown batch_loss(model::ModelParams& params, const model::ModelConfig& cfg,
                         const data::SequenceBatch& batch, float lambda,
                         std::uint64_t dropout_seed, model::Mode mode) {
  Tape tape(false);
  model::BoundParams bound = model::bind(tape, params);
  std::mt19937 rng = make_engine(dropout_seed);
  return batch_loss(tape, bound, cfg, batch, lambda, mode, rng, nullptr);
}

}  // namespace gsr::objective
