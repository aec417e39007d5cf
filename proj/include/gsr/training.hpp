#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gsr/data.hpp"
#include "gsr/model.hpp"

namespace gsr::train {

struct TrainConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float lambda = 0.0f;
  int batch_size = 128;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 42;
  bool include_valid_target = true;
  int eval_negatives = 1000;
  int workers = 1;

  void validate() const;
};

/// Optimizer state: bias-corrected first/second moments per parameter, in
/// checkpoint order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  static AdamState init(const model::ModelParams& params);
};

/// One adaptive-moment update. Frozen padding rows are left untouched even
/// when a gradient is injected for them.
void adam_step(model::ModelParams& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean BPR term per valid position
  double reg = 0.0;
  double valid_mrr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_valid_mrr = 0.0;
};

/// Validation hook: returns the metric used for model selection (MRR).
using Evaluator = std::function<double(const model::ModelParams&)>;

/// Epoch loop with seeded shuffling, per-epoch negative resampling, Adam
/// updates, per-epoch validation MRR, best-checkpoint tracking, and early
/// stopping after `patience` epochs without improvement. The checkpoint with
/// the best validation MRR is written to `checkpoint_path` and reloaded into
/// `out_params` at the end. `history_out`, when given, receives one
/// tab-separated line per epoch: epoch, loss, reg, valid_mrr.
TrainResult train(const data::SplitDataset& split, const model::ModelConfig& model_cfg,
                  const TrainConfig& cfg, const std::string& checkpoint_path,
                  model::ModelParams* out_params, const Evaluator& evaluator = {},
                  std::ostream* history_out = nullptr);

inline constexpr const char* kCheckpointMagic = "GSR-CKPT v1\n";

void save_checkpoint(const model::ModelParams& params, const model::ModelConfig& cfg,
                     const std::string& path);

struct Checkpoint {
  model::ModelConfig config;
  model::ModelParams params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace gsr::train
