#include "gsr/config.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gsr/errors.hpp"

namespace gsr::cli {

model::ModelConfig RunConfig::model_config(int num_items) const {
  model::ModelConfig cfg;
  cfg.d = d;
  cfg.n = n;
  cfg.num_layers = layers;
  cfg.dropout_rate = dropout;
  cfg.num_items = num_items;
  return cfg;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.epsilon = epsilon;
  cfg.lambda = lambda;
  cfg.batch_size = batch_size;
  cfg.max_epochs = max_epochs;
  cfg.patience = patience;
  cfg.seed = seed;
  cfg.include_valid_target = train_on_valid;
  cfg.eval_negatives = eval_negatives;
  cfg.workers = workers;
  return cfg;
}

data::LoadOptions RunConfig::load_options() const {
  data::LoadOptions options;
  if (format == "csv") {
    options.format = data::InputFormat::csv;
  } else if (format == "tsv") {
    options.format = data::InputFormat::tsv;
  } else if (format == "jsonl" || format == "json-lines") {
    options.format = data::InputFormat::jsonl;
  } else {
    throw ConfigError("invalid value for 'format': '" + format +
                      "' (expected csv, tsv or jsonl)");
  }
  if (!delimiter.empty()) {
    if (delimiter.size() != 1) {
      throw ConfigError("invalid value for 'delimiter': '" + delimiter +
                        "' (one character expected)");
    }
    options.delimiter = delimiter[0];
  }
  options.count_floor = count_floor;
  return options;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
int parse_number<int>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument("");
    }
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for '" + key + "': '" + value + "' (integer expected)");
  }
}

template <>
std::uint64_t parse_number<std::uint64_t>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument("");
    }
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for '" + key + "': '" + value +
                      "' (unsigned integer expected)");
  }
}

template <>
float parse_number<float>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const float v = std::stof(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument("");
    }
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for '" + key + "': '" + value + "' (number expected)");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") {
    return true;
  }
  if (value == "false" || value == "0" || value == "no" || value == "off") {
    return false;
  }
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (boolean expected)");
}

std::vector<int> parse_bucket_list(const std::string& key, const std::string& value) {
  std::vector<int> bounds;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    bounds.push_back(parse_number<int>(key, part));
  }
  if (bounds.empty()) {
    throw ConfigError("invalid value for '" + key + "': empty bucket list");
  }
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    if (bounds[i] <= bounds[i - 1]) {
      throw ConfigError("invalid value for '" + key + "': bounds must be strictly increasing");
    }
  }
  return bounds;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) {
    return "";
  }
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

std::string join_buckets(const std::vector<int>& bounds) {
  std::string out;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (i > 0) {
      out += ",";
    }
    out += std::to_string(bounds[i]);
  }
  return out;
}

}  // namespace

void apply_kv(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "d") {
    config.d = parse_number<int>(key, value);
  } else if (key == "n") {
    config.n = parse_number<int>(key, value);
  } else if (key == "layers") {
    config.layers = parse_number<int>(key, value);
  } else if (key == "dropout") {
    config.dropout = parse_number<float>(key, value);
  } else if (key == "learning_rate") {
    config.learning_rate = parse_number<float>(key, value);
  } else if (key == "beta1") {
    config.beta1 = parse_number<float>(key, value);
  } else if (key == "beta2") {
    config.beta2 = parse_number<float>(key, value);
  } else if (key == "epsilon") {
    config.epsilon = parse_number<float>(key, value);
  } else if (key == "lambda") {
    config.lambda = parse_number<float>(key, value);
  } else if (key == "batch_size") {
    config.batch_size = parse_number<int>(key, value);
  } else if (key == "max_epochs") {
    config.max_epochs = parse_number<int>(key, value);
  } else if (key == "patience") {
    config.patience = parse_number<int>(key, value);
  } else if (key == "seed") {
    config.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "train_on_valid") {
    config.train_on_valid = parse_bool(key, value);
  } else if (key == "eval_seed") {
    config.eval_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "eval_negatives") {
    config.eval_negatives = parse_number<int>(key, value);
  } else if (key == "exhaustive_eval") {
    config.exhaustive_eval = parse_bool(key, value);
  } else if (key == "length_buckets") {
    config.length_buckets = parse_bucket_list(key, value);
  } else if (key == "frequency_buckets") {
    config.frequency_buckets = parse_bucket_list(key, value);
  } else if (key == "workers") {
    config.workers = parse_number<int>(key, value);
  } else if (key == "format") {
    config.format = value;
  } else if (key == "delimiter") {
    config.delimiter = value;
  } else if (key == "count_floor") {
    config.count_floor = parse_number<int>(key, value);
  } else if (key == "cache") {
    config.cache = value;
  } else if (key == "checkpoint") {
    config.checkpoint = value;
  } else if (key == "history") {
    config.history = value;
  } else if (key == "report") {
    config.report = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void apply_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_kv(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig config;
  if (!path.empty()) {
    apply_file(config, path);
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + kv + "' is not of the form key=value");
    }
    apply_kv(config, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return config;
}

void print_config(const RunConfig& c, std::ostream& out) {
  out << "d = " << c.d << "\n";
  out << "n = " << c.n << "\n";
  out << "layers = " << c.layers << "\n";
  out << "dropout = " << c.dropout << "\n";
  out << "learning_rate = " << c.learning_rate << "\n";
  out << "beta1 = " << c.beta1 << "\n";
  out << "beta2 = " << c.beta2 << "\n";
  out << "epsilon = " << c.epsilon << "\n";
  out << "lambda = " << c.lambda << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "max_epochs = " << c.max_epochs << "\n";
  out << "patience = " << c.patience << "\n";
  out << "seed = " << c.seed << "\n";
  out << "train_on_valid = " << (c.train_on_valid ? "true" : "false") << "\n";
  out << "eval_seed = " << c.eval_seed << "\n";
  out << "eval_negatives = " << c.eval_negatives << "\n";
  out << "exhaustive_eval = " << (c.exhaustive_eval ? "true" : "false") << "\n";
  out << "length_buckets = " << join_buckets(c.length_buckets) << "\n";
  out << "frequency_buckets = " << join_buckets(c.frequency_buckets) << "\n";
  out << "workers = " << c.workers << "\n";
  out << "format = " << c.format << "\n";
  out << "delimiter = " << c.delimiter << "\n";
  out << "count_floor = " << c.count_floor << "\n";
  out << "cache = " << c.cache << "\n";
  out << "checkpoint = " << c.checkpoint << "\n";
  out << "history = " << c.history << "\n";
  out << "report = " << c.report << "\n";
}

}  // namespace gsr::cli
