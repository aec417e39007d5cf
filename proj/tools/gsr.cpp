// gsr: distribution-based sequential recommender.
//
// Subcommands: preprocess, train, evaluate, show-config.
// Exit codes: 2 data error, 3 config error, 4 numerical divergence,
// 5 checkpoint/dataset compatibility error.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsr/config.hpp"
#include "gsr/data.hpp"
#include "gsr/errors.hpp"
#include "gsr/evaluation.hpp"
#include "gsr/model.hpp"
#include "gsr/training.hpp"

namespace {

int log_level() {
  // GSR_LOG: quiet | info | debug
  const char* env = std::getenv("GSR_LOG");
  if (env == nullptr) {
    return 1;
  }
  const std::string v(env);
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) {
    std::cerr << "[gsr] " << msg << "\n";
  }
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
};

gsr::cli::RunConfig resolve_config(const CommonFlags& flags) {
  gsr::cli::RunConfig config = gsr::cli::load_config(flags.config_path, flags.overrides);
  if (flags.seed_set) {
    config.seed = flags.seed;
    config.eval_seed = flags.seed;
  }
  if (flags.workers > 0) {
    config.workers = flags.workers;
  }
  return config;
}

void add_common_flags(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--config", flags->config_path, "flat key = value configuration file");
  cmd->add_option("--set", flags->overrides, "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", flags->seed, "override both the training and evaluation seed")
      ->each([flags](const std::string&) { flags->seed_set = true; });
  cmd->add_option("--workers", flags->workers, "evaluation worker threads");
}

int cmd_preprocess(const gsr::cli::RunConfig& config, const std::string& input,
                   const std::string& output) {
  std::ifstream in(input, std::ios::binary);
  if (!in) {
    throw gsr::DataError("cannot open '" + input + "'");
  }
  const gsr::data::InteractionDataset ds = gsr::data::load_interactions(in, config.load_options());
  ds.save_file(output);
  char buf[128];
  std::printf("users   %d\n", ds.num_users());
  std::printf("items   %d\n", ds.num_items());
  std::printf("actions %llu\n", static_cast<unsigned long long>(ds.num_actions));
  std::snprintf(buf, sizeof(buf), "density %.3f%%\n", ds.density() * 100.0);
  std::fputs(buf, stdout);
  log_info("wrote dataset cache to " + output);
  return 0;
}

int cmd_train(const gsr::cli::RunConfig& config) {
  const auto ds = gsr::data::InteractionDataset::load_file(config.cache);
  const auto split = gsr::data::split_leave_one_out(ds);
  const auto model_cfg = config.model_config(ds.num_items());
  const auto train_cfg = config.train_config();

  std::ofstream history(config.history);
  if (!history) {
    throw gsr::DataError("cannot open '" + config.history + "' for writing");
  }
  history << "epoch\tloss\treg\tvalid_mrr\n";

  gsr::model::ModelParams best;
  const auto result = gsr::train::train(split, model_cfg, train_cfg, config.checkpoint, &best,
                                        {}, &history);
  log_info("best validation MRR " + std::to_string(result.best_valid_mrr) + " at epoch " +
           std::to_string(result.best_epoch) + " (" + std::to_string(result.history.size()) +
           " epochs run)");
  log_info("checkpoint written to " + config.checkpoint);
  return 0;
}

int cmd_evaluate(const gsr::cli::RunConfig& config) {
  const auto ckpt = gsr::train::load_checkpoint(config.checkpoint);
  const auto ds = gsr::data::InteractionDataset::load_file(config.cache);
  if (ckpt.config.num_items != ds.num_items()) {
    throw gsr::CompatError("checkpoint was trained with " +
                           std::to_string(ckpt.config.num_items) + " items, dataset has " +
                           std::to_string(ds.num_items()));
  }
  const auto split = gsr::data::split_leave_one_out(ds);

  gsr::eval::EvalOptions options;
  options.target = gsr::eval::EvalOptions::Target::test;
  options.num_negatives = config.eval_negatives;
  options.seed = config.eval_seed;
  options.workers = config.workers;
  options.exhaustive = config.exhaustive_eval;
  options.length_buckets = gsr::eval::Buckets{config.length_buckets};
  options.frequency_buckets = gsr::eval::Buckets{config.frequency_buckets};

  const auto report = gsr::eval::evaluate(ckpt.params, ckpt.config, split, options);
  gsr::eval::write_report_text(report, std::cout);
  std::ofstream out(config.report);
  if (!out) {
    throw gsr::DataError("cannot open '" + config.report + "' for writing");
  }
  gsr::eval::write_report_machine(report, out);
  log_info("machine-readable report written to " + config.report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gsr: distribution-based sequential recommender"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 2 data error, 3 config error, 4 numerical divergence,\n"
      "5 checkpoint/dataset compatibility error.\n"
      "Environment: GSR_LOG=quiet|info|debug controls stderr verbosity.");

  CommonFlags pre_flags, train_flags, eval_flags, show_flags;
  std::string input_path, output_path;

  CLI::App* pre = app.add_subcommand("preprocess", "build a GSR-DS dataset cache");
  pre->add_option("input", input_path, "raw interaction file")->required();
  pre->add_option("output", output_path, "cache path to write")->required();
  add_common_flags(pre, &pre_flags);
  pre->add_option("--format", [&pre_flags](const std::vector<std::string>& v) {
        pre_flags.overrides.push_back("format=" + v.back());
        return true;
      }, "input format: csv, tsv or jsonl");
  pre->add_option("--delimiter", [&pre_flags](const std::vector<std::string>& v) {
        pre_flags.overrides.push_back("delimiter=" + v.back());
        return true;
      }, "field delimiter override");
  pre->add_option("--count-floor", [&pre_flags](const std::vector<std::string>& v) {
        pre_flags.overrides.push_back("count_floor=" + v.back());
        return true;
      }, "drop items/users with fewer interactions");

  CLI::App* trn = app.add_subcommand("train", "train and keep the best-validation checkpoint");
  add_common_flags(trn, &train_flags);

  CLI::App* evl = app.add_subcommand("evaluate", "rank test items and report metrics");
  add_common_flags(evl, &eval_flags);

  CLI::App* show = app.add_subcommand("show-config", "print the effective configuration");
  add_common_flags(show, &show_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return gsr::exit_code::config;
  }

  try {
    if (pre->parsed()) {
      return cmd_preprocess(resolve_config(pre_flags), input_path, output_path);
    }
    if (trn->parsed()) {
      return cmd_train(resolve_config(train_flags));
    }
    if (evl->parsed()) {
      return cmd_evaluate(resolve_config(eval_flags));
    }
    if (show->parsed()) {
      gsr::cli::print_config(resolve_config(show_flags), std::cout);
      return 0;
    }
  } catch (const gsr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return gsr::exit_code::config;
  } catch (const gsr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return gsr::exit_code::numeric;
  } catch (const gsr::CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return gsr::exit_code::compat;
  } catch (const gsr::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return gsr::exit_code::data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
