#include "gsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "gsr/errors.hpp"
#include "gsr/evaluation.hpp"
#include "gsr/objective.hpp"
#include "gsr/rng.hpp"

namespace gsr::train {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0f) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f) {
    throw ConfigError("beta1/beta2 must lie in [0, 1)");
  }
  if (epsilon <= 0.0f) {
    throw ConfigError("epsilon must be > 0");
  }
  if (lambda < 0.0f) {
    throw ConfigError("lambda must be >= 0");
  }
  if (batch_size < 1 || max_epochs < 1 || patience < 1) {
    throw ConfigError("batch_size, max_epochs and patience must all be >= 1");
  }
  if (eval_negatives < 1 || workers < 1) {
    throw ConfigError("eval_negatives and workers must be >= 1");
  }
}

AdamState AdamState::init(const model::ModelParams& params) {
  AdamState state;
  params.for_each([&](const std::string&, const Tensor& t, bool) {
    state.m.emplace_back(t.rows(), t.cols());
    state.v.emplace_back(t.rows(), t.cols());
  });
  return state;
}

void adam_step(model::ModelParams& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const TrainConfig& cfg) {
  std::vector<std::pair<Tensor*, bool>> tensors;
  params.for_each([&](const std::string&, Tensor& t, bool frozen) {
    tensors.emplace_back(&t, frozen);
  });
  if (tensors.size() != grads.size() || tensors.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.step);
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    Tensor& t = *tensors[p].first;
    const Tensor& g = *grads[p];
    if (!t.same_shape(g)) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    const std::size_t start =
        tensors[p].second ? static_cast<std::size_t>(t.cols()) : 0;  // skip padding row
    for (std::size_t i = start; i < t.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      t[i] -= static_cast<float>(cfg.learning_rate * mhat /
                                 (std::sqrt(vhat) + static_cast<double>(cfg.epsilon)));
    }
  }
}

namespace {

std::string fmt_value(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f32(std::ostream& out, float v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) {
    throw DataError("truncated GSR-CKPT file");
  }
  return v;
}

float read_f32(std::istream& in) {
  float v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) {
    throw DataError("truncated GSR-CKPT file");
  }
  return v;
}

}  // namespace

void save_checkpoint(const model::ModelParams& params, const model::ModelConfig& cfg,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot open '" + path + "' for writing");
  }
  const std::string magic(kCheckpointMagic);
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(out, static_cast<std::uint32_t>(cfg.d));
  write_u32(out, static_cast<std::uint32_t>(cfg.n));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_layers));
  write_f32(out, cfg.dropout_rate);
  write_u32(out, static_cast<std::uint32_t>(cfg.num_items));
  write_u32(out, static_cast<std::uint32_t>(params.num_tensors()));
  params.for_each([&](const std::string& name, const Tensor& t, bool) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rows()));
    write_u32(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!out) {
    throw DataError("failed to write checkpoint '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open '" + path + "'");
  }
  const std::string magic(kCheckpointMagic);
  std::string header(magic.size(), '\0');
  in.read(header.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || header != magic) {
    throw DataError("not a GSR-CKPT file");
  }
  Checkpoint ckpt;
  ckpt.config.d = static_cast<int>(read_u32(in));
  ckpt.config.n = static_cast<int>(read_u32(in));
  ckpt.config.num_layers = static_cast<int>(read_u32(in));
  ckpt.config.dropout_rate = read_f32(in);
  ckpt.config.num_items = static_cast<int>(read_u32(in));
  ckpt.config.validate();
  // Shapes come from the stored config; stored tensors must agree with them.
  ckpt.params = model::ModelParams::init(ckpt.config, 0);
  const std::uint32_t count = read_u32(in);
  if (count != ckpt.params.num_tensors()) {
    throw CompatError("checkpoint tensor count disagrees with its config");
  }
  ckpt.params.for_each([&](const std::string& name, Tensor& t, bool) {
    const std::uint32_t name_len = read_u32(in);
    std::string stored_name(name_len, '\0');
    in.read(stored_name.data(), static_cast<std::streamsize>(name_len));
    if (!in || stored_name != name) {
      throw CompatError("checkpoint tensor '" + stored_name + "' does not match expected '" +
                        name + "'");
    }
    const int rows = static_cast<int>(read_u32(in));
    const int cols = static_cast<int>(read_u32(in));
    if (rows != t.rows() || cols != t.cols()) {
      throw CompatError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) +
                        "x" + std::to_string(cols) + ", config expects " +
                        std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    }
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) {
      throw DataError("truncated GSR-CKPT file");
    }
  });
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes after checkpoint payload");
  }
  return ckpt;
}

TrainResult train(const data::SplitDataset& split, const model::ModelConfig& model_cfg,
                  const TrainConfig& cfg, const std::string& checkpoint_path,
                  model::ModelParams* out_params, const Evaluator& evaluator,
                  std::ostream* history_out) {
  model_cfg.validate();
  cfg.validate();
  const data::BatchOptions batch_options{cfg.include_valid_target};
  if (data::count_trainable_positions(split, batch_options) == 0) {
    throw DataError("dataset has no trainable positions");
  }

  model::ModelParams params = model::ModelParams::init(model_cfg, cfg.seed);
  AdamState adam = AdamState::init(params);

  Evaluator validate = evaluator;
  if (!validate) {
    validate = [&](const model::ModelParams& p) {
      eval::EvalOptions options;
      options.target = eval::EvalOptions::Target::valid;
      options.num_negatives = cfg.eval_negatives;
      options.seed = mix_seed(cfg.seed, {0x76616c6964ULL});
      options.workers = cfg.workers;
      const auto results = eval::rank_users(p, model_cfg, split, options);
      return results.empty() ? 0.0 : eval::compute_metrics(results).mrr;
    };
  }

  std::vector<int> user_order(static_cast<std::size_t>(split.num_users()));
  std::iota(user_order.begin(), user_order.end(), 1);
  std::mt19937 shuffle_rng = make_engine(mix_seed(cfg.seed, {0x73687566666cULL}));

  TrainResult result;
  double best_mrr = -std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(user_order.begin(), user_order.end(), shuffle_rng);

    double loss_weighted = 0.0;
    double reg_accum = 0.0;
    long valid_total = 0;
    long batches = 0;
    for (std::size_t start = 0; start < user_order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(user_order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const int> chunk(user_order.data() + start, end - start);
      const std::uint64_t batch_seed = mix_seed(
          cfg.seed, {0x6261746368ULL, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(start)});
      const data::SequenceBatch batch =
          data::make_training_batch(split, chunk, model_cfg.n, batch_seed, batch_options);
      if (batch.num_valid() == 0) {
        continue;
      }

      Tape tape;
      model::BoundParams bound = model::bind(tape, params);
      std::mt19937 dropout_rng = make_engine(mix_seed(
          cfg.seed, {0x64726f70ULL, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(start)}));
      Var loss_var;
      const objective::LossBreakdown lb = objective::batch_loss(
          tape, bound, model_cfg, batch, cfg.lambda, model::Mode::train, dropout_rng, &loss_var);
      if (!std::isfinite(lb.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss_var);

      std::vector<const Tensor*> grads;
      grads.reserve(bound.vars.size());
      for (Var v : bound.vars) {
        grads.push_back(&tape.grad(v));
      }
      adam_step(params, grads, adam, cfg);

      loss_weighted += lb.bpr_term * lb.num_valid_positions;
      reg_accum += lb.reg_term;
      valid_total += lb.num_valid_positions;
      ++batches;
    }
    if (valid_total == 0) {
      throw DataError("dataset has no trainable positions");
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_weighted / static_cast<double>(valid_total);
    record.reg = reg_accum / static_cast<double>(batches);
    record.valid_mrr = validate(params);
    result.history.push_back(record);
    if (history_out != nullptr) {
      *history_out << record.epoch << "\t" << fmt_value(record.loss) << "\t"
                   << fmt_value(record.reg) << "\t" << fmt_value(record.valid_mrr) << "\n";
      history_out->flush();
    }

    if (record.valid_mrr > best_mrr) {
      best_mrr = record.valid_mrr;
      result.best_epoch = epoch;
      result.best_valid_mrr = record.valid_mrr;
      epochs_since_improvement = 0;
      save_checkpoint(params, model_cfg, checkpoint_path);
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= cfg.patience) {
        break;
      }
    }
  }

  if (out_params != nullptr) {
    *out_params = load_checkpoint(checkpoint_path).params;
  }
  return result;
}

}  // namespace gsr::train
