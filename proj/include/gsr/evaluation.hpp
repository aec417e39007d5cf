#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "gsr/data.hpp"
#include "gsr/model.hpp"

namespace gsr::eval {

/// One user's ranked candidate list, ascending by 2-Wasserstein distance with
/// ties broken by ascending item id.
struct RankingResult {
  int user = 0;
  int truth_item = 0;
  int truth_rank = 0;  // 1-based
  int num_candidates = 0;
  std::vector<int> items;      // empty when lists were not kept
  std::vector<double> scores;  // parallel to items, non-decreasing
};

struct MetricReport {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double ndcg_at_5 = 0.0;
  double mrr = 0.0;
  int num_users = 0;
};

/// Bucketing by inclusive upper bounds; values above the last bound fall in a
/// final open bucket. The lowest bucket starts at 0.
struct Buckets {
  std::vector<int> upper_bounds;

  void validate() const;
  int bucket_of(int value) const;
  int num_buckets() const { return static_cast<int>(upper_bounds.size()) + 1; }
  std::string label(int bucket) const;
};

struct SliceEntry {
  std::string label;
  std::optional<MetricReport> metrics;  // nullopt = empty slice
};

struct SlicedReport {
  MetricReport global;
  std::vector<SliceEntry> by_length;
  std::vector<SliceEntry> by_frequency;
  std::uint64_t seed = 0;
  int num_negatives = 0;
};

/// Distances from the inferred distribution at the last context position to
/// every candidate. `candidates` must contain `truth_item` exactly once.
RankingResult score_user(const model::ModelParams& params, const model::ModelConfig& cfg,
                         std::span<const int> context, std::span<const int> candidates,
                         int truth_item, bool keep_lists = true);

/// k distinct items outside `history` (and distinct from the truth), with the
/// ground-truth item appended. When fewer legal items exist they are all
/// used; a user who interacted with everything falls back to all items
/// except the truth so the ranking stays meaningful.
std::vector<int> sample_eval_negatives(const std::unordered_set<int>& history, int truth_item,
                                       int num_items, int k, std::mt19937& rng);

MetricReport compute_metrics(std::span<const RankingResult> results);

/// Number of occurrences of each item across all users' train prefixes.
std::vector<int> train_item_frequency(const data::SplitDataset& split);

/// Groups users by training-sequence length and test items by training-set
/// frequency; empty groups are reported as empty, not zero.
SlicedReport slice_metrics(std::span<const RankingResult> results,
                           const data::SplitDataset& split, const Buckets& length_buckets,
                           const Buckets& frequency_buckets);

struct EvalOptions {
  enum class Target { test, valid };
  Target target = Target::test;
  // Context for test scoring includes the validation item.
  bool context_includes_valid = true;
  int num_negatives = 1000;
  std::uint64_t seed = 1;
  int workers = 1;
  bool exhaustive = false;  // rank against every non-interacted item
  bool keep_lists = false;
  Buckets length_buckets{{1, 4, 9, 19}};
  Buckets frequency_buckets{{1, 4, 9, 19}};
};

std::vector<RankingResult> rank_users(const model::ModelParams& params,
                                      const model::ModelConfig& cfg,
                                      const data::SplitDataset& split, const EvalOptions& options);

SlicedReport evaluate(const model::ModelParams& params, const model::ModelConfig& cfg,
                      const data::SplitDataset& split, const EvalOptions& options);

void write_report_text(const SlicedReport& report, std::ostream& out);
void write_report_machine(const SlicedReport& report, std::ostream& out);

}  // namespace gsr::eval
