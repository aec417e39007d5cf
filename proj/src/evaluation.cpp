#include "gsr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "gsr/errors.hpp"
#include "gsr/objective.hpp"
#include "gsr/rng.hpp"

namespace gsr::eval {

void Buckets::validate() const {
  if (upper_bounds.empty()) {
    throw ConfigError("buckets: at least one boundary is required");
  }
  for (std::size_t i = 0; i < upper_bounds.size(); ++i) {
    if (upper_bounds[i] < 0 || (i > 0 && upper_bounds[i] <= upper_bounds[i - 1])) {
      throw ConfigError("buckets: boundaries must be non-negative and strictly increasing");
    }
  }
}

int Buckets::bucket_of(int value) const {
  for (std::size_t i = 0; i < upper_bounds.size(); ++i) {
    if (value <= upper_bounds[i]) {
      return static_cast<int>(i);
    }
  }
  return static_cast<int>(upper_bounds.size());
}

std::string Buckets::label(int bucket) const {
  if (bucket == static_cast<int>(upper_bounds.size())) {
    return std::to_string(upper_bounds.back() + 1) + "+";
  }
  const int lo = bucket == 0 ? 0 : upper_bounds[static_cast<std::size_t>(bucket) - 1] + 1;
  const int hi = upper_bounds[static_cast<std::size_t>(bucket)];
  return lo == hi ? std::to_string(hi) : std::to_string(lo) + "-" + std::to_string(hi);
}

RankingResult score_user(const model::ModelParams& params, const model::ModelConfig& cfg,
                         std::span<const int> context, std::span<const int> candidates,
                         int truth_item, bool keep_lists) {
  if (candidates.empty()) {
    throw std::invalid_argument("score_user: empty candidate list");
  }
  const auto padded = data::pad_or_truncate(context, cfg.n);
  const auto dists = model::encode(params, cfg, padded, model::Mode::infer);
  const model::GaussianParams& pred = dists.back();

  model::GaussianParams scratch;
  scratch.mean.resize(static_cast<std::size_t>(cfg.d));
  scratch.cov_diag.resize(static_cast<std::size_t>(cfg.d));

  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int item : candidates) {
    if (item < 1 || item > cfg.num_items) {
      throw std::out_of_range("score_user: candidate id out of range");
    }
    for (int c = 0; c < cfg.d; ++c) {
      scratch.mean[static_cast<std::size_t>(c)] = params.item_mean(item, c);
      scratch.cov_diag[static_cast<std::size_t>(c)] =
          elu_plus_one_scalar(params.item_cov(item, c));
    }
    scored.emplace_back(objective::wasserstein2_diag(pred, scratch), item);
  }
  std::sort(scored.begin(), scored.end());  // (distance, item id) ascending

  RankingResult result;
  result.truth_item = truth_item;
  result.num_candidates = static_cast<int>(scored.size());
  int truth_seen = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].second == truth_item) {
      result.truth_rank = static_cast<int>(i) + 1;
      ++truth_seen;
    }
  }
  if (truth_seen != 1) {
    throw std::invalid_argument("score_user: ground truth must appear exactly once");
  }
  if (keep_lists) {
    result.items.reserve(scored.size());
    result.scores.reserve(scored.size());
    for (const auto& [score, item] : scored) {
      result.items.push_back(item);
      result.scores.push_back(score);
    }
  }
  return result;
}

std::vector<int> sample_eval_negatives(const std::unordered_set<int>& history, int truth_item,
                                       int num_items, int k, std::mt19937& rng) {
  auto excluded = [&](int item) { return item == truth_item || history.contains(item); };
  int legal = num_items - static_cast<int>(history.size());
  if (!history.contains(truth_item)) {
    --legal;
  }

  std::vector<int> candidates;
  if (legal <= 0) {
    // Saturated user: every item interacted with. Rank against everything
    // else so the metric stays informative.
    candidates.reserve(static_cast<std::size_t>(num_items));
    for (int i = 1; i <= num_items; ++i) {
      if (i != truth_item) {
        candidates.push_back(i);
      }
    }
  } else if (legal <= k) {
    candidates.reserve(static_cast<std::size_t>(legal));
    for (int i = 1; i <= num_items; ++i) {
      if (!excluded(i)) {
        candidates.push_back(i);
      }
    }
  } else {
    candidates.reserve(static_cast<std::size_t>(k));
    std::unordered_set<int> chosen;
    chosen.reserve(static_cast<std::size_t>(k) * 2);
    std::uniform_int_distribution<int> dist(1, num_items);
    while (static_cast<int>(candidates.size()) < k) {
      const int item = dist(rng);
      if (excluded(item) || chosen.contains(item)) {
        continue;
      }
      chosen.insert(item);
      candidates.push_back(item);
    }
  }
  candidates.push_back(truth_item);
  return candidates;
}

MetricReport compute_metrics(std::span<const RankingResult> results) {
  if (results.empty()) {
    throw std::invalid_argument("compute_metrics: no results");
  }
  MetricReport report;
  report.num_users = static_cast<int>(results.size());
  double recall1 = 0.0, recall5 = 0.0, ndcg5 = 0.0, mrr = 0.0;
  for (const RankingResult& r : results) {
    if (r.truth_rank < 1) {
      throw std::invalid_argument("compute_metrics: result without a rank");
    }
    recall1 += r.truth_rank <= 1 ? 1.0 : 0.0;
    recall5 += r.truth_rank <= 5 ? 1.0 : 0.0;
    ndcg5 += r.truth_rank <= 5 ? 1.0 / std::log2(static_cast<double>(r.truth_rank) + 1.0) : 0.0;
    mrr += 1.0 / static_cast<double>(r.truth_rank);
  }
  const double n = static_cast<double>(report.num_users);
  report.recall_at_1 = recall1 / n;
  report.recall_at_5 = recall5 / n;
  report.ndcg_at_5 = ndcg5 / n;
  report.mrr = mrr / n;
  return report;
}

std::vector<int> train_item_frequency(const data::SplitDataset& split) {
  std::vector<int> freq(static_cast<std::size_t>(split.num_items) + 1, 0);
  for (int u = 1; u <= split.num_users(); ++u) {
    for (int item : split.users[static_cast<std::size_t>(u)].train) {
      ++freq[static_cast<std::size_t>(item)];
    }
  }
  return freq;
}

SlicedReport slice_metrics(std::span<const RankingResult> results,
                           const data::SplitDataset& split, const Buckets& length_buckets,
                           const Buckets& frequency_buckets) {
  length_buckets.validate();
  frequency_buckets.validate();
  SlicedReport report;
  report.global = compute_metrics(results);

  const std::vector<int> freq = train_item_frequency(split);
  std::vector<std::vector<RankingResult>> by_len(
      static_cast<std::size_t>(length_buckets.num_buckets()));
  std::vector<std::vector<RankingResult>> by_freq(
      static_cast<std::size_t>(frequency_buckets.num_buckets()));
  for (const RankingResult& r : results) {
    const auto& user = split.users.at(static_cast<std::size_t>(r.user));
    const int train_len = static_cast<int>(user.train.size());
    by_len[static_cast<std::size_t>(length_buckets.bucket_of(train_len))].push_back(r);
    const int f = freq.at(static_cast<std::size_t>(r.truth_item));
    by_freq[static_cast<std::size_t>(frequency_buckets.bucket_of(f))].push_back(r);
  }

  for (int b = 0; b < length_buckets.num_buckets(); ++b) {
    SliceEntry entry;
    entry.label = length_buckets.label(b);
    const auto& group = by_len[static_cast<std::size_t>(b)];
    if (!group.empty()) {
      entry.metrics = compute_metrics(group);
    }
    report.by_length.push_back(std::move(entry));
  }
  for (int b = 0; b < frequency_buckets.num_buckets(); ++b) {
    SliceEntry entry;
    entry.label = frequency_buckets.label(b);
    const auto& group = by_freq[static_cast<std::size_t>(b)];
    if (!group.empty()) {
      entry.metrics = compute_metrics(group);
    }
    report.by_frequency.push_back(std::move(entry));
  }
  return report;
}

namespace {

struct EvalTask {
  int user = 0;
  std::vector<int> context;
  int truth = 0;
};

}  // namespace

std::vector<RankingResult> rank_users(const model::ModelParams& params,
                                      const model::ModelConfig& cfg,
                                      const data::SplitDataset& split,
                                      const EvalOptions& options) {
  std::vector<EvalTask> tasks;
  for (int u = 1; u <= split.num_users(); ++u) {
    const auto& s = split.users[static_cast<std::size_t>(u)];
    EvalTask task;
    task.user = u;
    if (options.target == EvalOptions::Target::test) {
      if (s.test == 0) {
        continue;
      }
      task.truth = s.test;
      task.context = s.train;
      if (options.context_includes_valid && s.valid != 0) {
        task.context.push_back(s.valid);
      }
    } else {
      if (s.valid == 0) {
        continue;
      }
      task.truth = s.valid;
      task.context = s.train;
    }
    tasks.push_back(std::move(task));
  }

  std::vector<RankingResult> results(tasks.size());
  const int workers = std::max(1, options.workers);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const EvalTask& task = tasks[i];
      std::vector<int> candidates;
      if (options.exhaustive) {
        const auto& hist = split.history[static_cast<std::size_t>(task.user)];
        candidates.reserve(static_cast<std::size_t>(split.num_items));
        for (int item = 1; item <= split.num_items; ++item) {
          if (item == task.truth || !hist.contains(item)) {
            candidates.push_back(item);
          }
        }
      } else {
        // Candidate sets depend only on (seed, user), not on sharding.
        std::mt19937 rng =
            make_engine(mix_seed(options.seed, {0x6576616cULL, static_cast<std::uint64_t>(task.user)}));
        candidates = sample_eval_negatives(split.history[static_cast<std::size_t>(task.user)],
                                           task.truth, split.num_items, options.num_negatives,
                                           rng);
      }
      RankingResult r = score_user(params, cfg, task.context, candidates, task.truth,
                                   options.keep_lists);
      r.user = task.user;
      results[i] = std::move(r);
    }
  };

  if (workers == 1 || tasks.size() < 2) {
    run_range(0, tasks.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (tasks.size() + workers - 1) / static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = static_cast<std::size_t>(w) * chunk;
      const std::size_t end = std::min(tasks.size(), begin + chunk);
      if (begin >= end) {
        break;
      }
      pool.emplace_back(run_range, begin, end);
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  return results;
}

SlicedReport evaluate(const model::ModelParams& params, const model::ModelConfig& cfg,
                      const data::SplitDataset& split, const EvalOptions& options) {
  const auto results = rank_users(params, cfg, split, options);
  SlicedReport report =
      slice_metrics(results, split, options.length_buckets, options.frequency_buckets);
  report.seed = options.seed;
  report.num_negatives = options.exhaustive ? -1 : options.num_negatives;
  return report;
}

namespace {

void print_metric_row(std::ostream& out, const std::string& label, const MetricReport& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "  %-12s %8.4f %8.4f %8.4f %8.4f %8d\n", label.c_str(),
                m.recall_at_1, m.recall_at_5, m.ndcg_at_5, m.mrr, m.num_users);
  out << buf;
}

void print_slices(std::ostream& out, const char* title, const std::vector<SliceEntry>& slices) {
  out << title << "\n";
  for (const SliceEntry& s : slices) {
    if (s.metrics.has_value()) {
      print_metric_row(out, s.label, *s.metrics);
    } else {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "  %-12s (empty)\n", s.label.c_str());
      out << buf;
    }
  }
}

std::string fmt_value(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void machine_rows(std::ostream& out, const std::string& slice, const MetricReport& m) {
  out << "recall@1\t" << slice << "\t" << fmt_value(m.recall_at_1) << "\t" << m.num_users << "\n";
  out << "recall@5\t" << slice << "\t" << fmt_value(m.recall_at_5) << "\t" << m.num_users << "\n";
  out << "ndcg@5\t" << slice << "\t" << fmt_value(m.ndcg_at_5) << "\t" << m.num_users << "\n";
  out << "mrr\t" << slice << "\t" << fmt_value(m.mrr) << "\t" << m.num_users << "\n";
}

}  // namespace

void write_report_text(const SlicedReport& report, std::ostream& out) {
  out << "evaluation (seed " << report.seed << ", "
      << (report.num_negatives < 0 ? std::string("exhaustive candidates")
                                   : std::to_string(report.num_negatives) + " negatives")
      << ")\n";
  out << "  slice        recall@1 recall@5   ndcg@5      mrr    users\n";
  print_metric_row(out, "all", report.global);
  print_slices(out, "by training-sequence length", report.by_length);
  print_slices(out, "by item training frequency", report.by_frequency);
}

void write_report_machine(const SlicedReport& report, std::ostream& out) {
  out << "# gsr metric report\n";
  out << "# seed\t" << report.seed << "\n";
  out << "# negatives\t" << report.num_negatives << "\n";
  out << "# metric\tslice\tvalue\tcount\n";
  machine_rows(out, "all", report.global);
  for (const SliceEntry& s : report.by_length) {
    if (s.metrics.has_value()) {
      machine_rows(out, "len:" + s.label, *s.metrics);
    }
  }
  for (const SliceEntry& s : report.by_frequency) {
    if (s.metrics.has_value()) {
      machine_rows(out, "freq:" + s.label, *s.metrics);
    }
  }
}

}  // namespace gsr::eval
