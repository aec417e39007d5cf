#pragma once

#include <random>

#include "gsr/autograd.hpp"
#include "gsr/data.hpp"
#include "gsr/model.hpp"

namespace gsr::objective {

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// sum_k (mu_a - mu_b)^2 + sum_k (sqrt(sigma_a) - sqrt(sigma_b))^2.
/// Symmetric, non-negative, zero iff the distributions coincide.
double wasserstein2_diag(const model::GaussianParams& a, const model::GaussianParams& b);

/// -log sigmoid(d(neg, pred) - d(pos, pred)); log 2 at zero margin.
double bpr_position_loss(const model::GaussianParams& pred, const model::GaussianParams& pos,
                         const model::GaussianParams& neg);

struct LossBreakdown {
  double bpr_term = 0.0;  // mean over valid positions
  double reg_term = 0.0;  // lambda * ||theta||^2, padding row excluded
  double total = 0.0;
  int num_valid_positions = 0;
};

/// Full training loss over a batch, built on the tape so backward() yields
/// gradients for every bound parameter. Masked positions contribute exactly
/// zero. Throws std::invalid_argument when the batch has no valid position.
LossBreakdown batch_loss(Tape& tape, const model::BoundParams& bound,
                         const model::ModelConfig& cfg, const data::SequenceBatch& batch,
                         float lambda, model::Mode mode, std::mt19937& dropout_rng,
                         Var* loss_out = nullptr);

/// Gradient-free convenience overload.
LossBreakdown batch_loss(model::ModelParams& params, const model::ModelConfig& cfg,
                         const data::SequenceBatch& batch, float lambda,
                         std::uint64_t dropout_seed = 0,
                         model::Mode mode = model::Mode::infer);

}  // namespace gsr::objective
