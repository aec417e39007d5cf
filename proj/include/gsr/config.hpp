#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gsr/data.hpp"
#include "gsr/model.hpp"
#include "gsr/training.hpp"

namespace gsr::cli {

/// Flat key = value run configuration. Precedence: command-line override >
/// config file > documented default. Unknown keys are rejected.
struct RunConfig {
  // model
  int d = 64;
  int n = 50;
  int layers = 1;
  float dropout = 0.2f;
  // training
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float lambda = 0.0f;
  int batch_size = 128;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 42;
  bool train_on_valid = true;
  // evaluation
  std::uint64_t eval_seed = 12345;
  int eval_negatives = 1000;
  bool exhaustive_eval = false;
  std::vector<int> length_buckets{1, 4, 9, 19};
  std::vector<int> frequency_buckets{1, 4, 9, 19};
  int workers = 1;
  // data / artifacts
  std::string format = "csv";
  std::string delimiter;  // empty = format default
  int count_floor = 0;
  std::string cache = "dataset.gsrds";
  std::string checkpoint = "model.gsrckpt";
  std::string history = "history.tsv";
  std::string report = "report.tsv";

  model::ModelConfig model_config(int num_items) const;
  train::TrainConfig train_config() const;
  data::LoadOptions load_options() const;
};

/// Applies one key = value assignment; throws ConfigError naming the key on
/// unknown keys or unparsable values.
void apply_kv(RunConfig& config, const std::string& key, const std::string& value);

/// Parses a flat key = value file ('#' comments, blank lines allowed).
void apply_file(RunConfig& config, const std::string& path);

/// defaults, then file (if non-empty), then overrides of the form key=value.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

void print_config(const RunConfig& config, std::ostream& out);

}  // namespace gsr::cli
