#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gsr/data.hpp"
#include "gsr/errors.hpp"
#include "gsr/evaluation.hpp"
#include "gsr/model.hpp"
#include "gsr/rng.hpp"

using namespace gsr;
using eval::RankingResult;

namespace {

model::ModelConfig tiny_config(int num_items, int d = 4, int n = 6) {
  model::ModelConfig cfg;
  cfg.d = d;
  cfg.n = n;
  cfg.num_layers = 1;
  cfg.dropout_rate = 0.0f;
  cfg.num_items = num_items;
  return cfg;
}

RankingResult with_rank(int user, int rank, int truth = 1) {
  RankingResult r;
  r.user = user;
  r.truth_rank = rank;
  r.truth_item = truth;
  r.num_candidates = 10;
  return r;
}

data::SplitDataset cycle_split(int users, int items, int len) {
  data::InteractionDataset ds;
  ds.user_names.push_back("");
  ds.item_names.push_back("");
  for (int i = 1; i <= items; ++i) {
    ds.item_names.push_back("i" + std::to_string(i));
    ds.item_index.emplace("i" + std::to_string(i), i);
  }
  ds.sequences.emplace_back();
  for (int u = 1; u <= users; ++u) {
    ds.user_names.push_back("u" + std::to_string(u));
    ds.user_index.emplace("u" + std::to_string(u), u);
    std::vector<int> seq;
    for (int t = 0; t < len; ++t) {
      seq.push_back((u + t) % items + 1);
    }
    ds.num_actions += seq.size();
    ds.sequences.push_back(std::move(seq));
  }
  return data::split_leave_one_out(ds);
}

}  // namespace

TEST_CASE("compute_metrics hand-evaluated ranks") {
  const std::vector<RankingResult> one{with_rank(1, 1)};
  const auto perfect = eval::compute_metrics(one);
  CHECK(perfect.recall_at_1 == 1.0);
  CHECK(perfect.recall_at_5 == 1.0);
  CHECK(perfect.ndcg_at_5 == 1.0);
  CHECK(perfect.mrr == 1.0);

  const auto third = eval::compute_metrics(std::vector<RankingResult>{with_rank(1, 3)});
  CHECK(third.recall_at_5 == 1.0);
  CHECK(third.recall_at_1 == 0.0);
  CHECK(third.ndcg_at_5 == doctest::Approx(0.5).epsilon(1e-12));  // 1/log2(4)
  CHECK(third.mrr == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const auto sixth = eval::compute_metrics(std::vector<RankingResult>{with_rank(1, 6)});
  CHECK(sixth.recall_at_5 == 0.0);
  CHECK(sixth.ndcg_at_5 == 0.0);
  CHECK(sixth.mrr == doctest::Approx(1.0 / 6).epsilon(1e-12));

  const std::vector<RankingResult> fixture{with_rank(1, 1), with_rank(2, 3), with_rank(3, 6)};
  const auto m = eval::compute_metrics(fixture);
  CHECK(m.recall_at_1 == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(m.recall_at_5 == doctest::Approx(2.0 / 3).epsilon(1e-9));
  CHECK(m.ndcg_at_5 == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(m.mrr == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(m.num_users == 3);

  CHECK_THROWS_AS(eval::compute_metrics(std::vector<RankingResult>{}), std::invalid_argument);
  CHECK(m.recall_at_1 <= m.recall_at_5);
  CHECK(m.ndcg_at_5 <= m.recall_at_5);
}

TEST_CASE("score_user ranks by distance with id tie-breaks") {
  const auto cfg = tiny_config(6);
  model::ModelParams params = model::ModelParams::init(cfg, 3);
  const std::vector<int> context{1, 2};

  // single candidate: rank 1
  const auto only = eval::score_user(params, cfg, context, std::vector<int>{4}, 4);
  CHECK(only.truth_rank == 1);
  CHECK(only.num_candidates == 1);

  // identical item rows tie; ascending id wins
  for (int c = 0; c < cfg.d; ++c) {
    params.item_mean(3, c) = params.item_mean(5, c);
    params.item_cov(3, c) = params.item_cov(5, c);
  }
  const auto tied = eval::score_user(params, cfg, context, std::vector<int>{5, 3}, 5);
  CHECK(tied.items.front() == 3);
  CHECK(tied.truth_rank == 2);
  CHECK(tied.scores[0] == tied.scores[1]);

  // scores are non-decreasing and the list is complete
  const std::vector<int> all{1, 2, 3, 4, 5, 6};
  const auto full = eval::score_user(params, cfg, context, all, 2);
  CHECK(full.items.size() == 6);
  for (std::size_t i = 1; i < full.scores.size(); ++i) {
    CHECK(full.scores[i] >= full.scores[i - 1]);
  }

  CHECK_THROWS_AS(eval::score_user(params, cfg, context, std::vector<int>{}, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(eval::score_user(params, cfg, context, std::vector<int>{1, 2}, 5),
                  std::invalid_argument);  // truth absent
}

TEST_CASE("a candidate matching the prediction's distribution ranks first") {
  const auto cfg = tiny_config(6);
  model::ModelParams params = model::ModelParams::init(cfg, 7);
  const std::vector<int> context{2, 4, 1};
  const auto padded = data::pad_or_truncate(context, cfg.n);
  const auto pred = model::encode(params, cfg, padded, model::Mode::infer).back();

  // write item 3's rows so its distribution reproduces the prediction
  for (int c = 0; c < cfg.d; ++c) {
    params.item_mean(3, c) = pred.mean[static_cast<std::size_t>(c)];
    const float v = pred.cov_diag[static_cast<std::size_t>(c)];
    params.item_cov(3, c) = v > 1.0f ? v - 1.0f : std::log(v);
  }
  // push the non-context candidates far away; context items must stay put
  // so the prediction itself is unchanged
  for (int item : {5, 6}) {
    for (int c = 0; c < cfg.d; ++c) {
      params.item_mean(item, c) = 50.0f + item;
    }
  }
  const auto r =
      eval::score_user(params, cfg, context, std::vector<int>{1, 2, 3, 4, 5, 6}, 3);
  CHECK(r.truth_rank == 1);
  CHECK(r.scores.front() < 1e-9);
}

TEST_CASE("an extra candidate farther than the truth never changes its rank") {
  const auto cfg = tiny_config(8);
  std::mt19937 seed_rng = make_engine(15);
  for (int trial = 0; trial < 20; ++trial) {
    model::ModelParams params = model::ModelParams::init(cfg, seed_rng());
    const std::vector<int> context{1, 2, 3};
    const std::vector<int> base{1, 2, 3, 4, 5};
    const auto before = eval::score_user(params, cfg, context, base, 4);
    // item 8 pushed beyond every base candidate
    for (int c = 0; c < cfg.d; ++c) {
      params.item_mean(8, c) = 500.0f;
    }
    std::vector<int> extended = base;
    extended.push_back(8);
    const auto after = eval::score_user(params, cfg, context, extended, 4);
    CHECK(after.truth_rank == before.truth_rank);
  }
}

TEST_CASE("sample_eval_negatives exhausts small item sets") {
  std::unordered_set<int> history{1, 2, 3};
  std::mt19937 rng = make_engine(21);
  // 10 items, truth outside history: 6 legal negatives + truth = 7
  const auto candidates = eval::sample_eval_negatives(history, 4, 10, 1000, rng);
  CHECK(candidates.size() == 7);
  CHECK(candidates.back() == 4);
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    CHECK(!history.contains(candidates[i]));
    CHECK(candidates[i] != 4);
  }
}

TEST_CASE("sample_eval_negatives draws k distinct non-interacted items") {
  std::mt19937 fixture_rng = make_engine(23);
  for (int trial = 0; trial < 300; ++trial) {
    const int num_items = 50 + static_cast<int>(fixture_rng() % 200);
    std::unordered_set<int> history;
    const int hist_size = static_cast<int>(fixture_rng() % 30);
    while (static_cast<int>(history.size()) < hist_size) {
      history.insert(1 + static_cast<int>(fixture_rng() % num_items));
    }
    int truth = 1 + static_cast<int>(fixture_rng() % num_items);
    const int k = 20;
    std::mt19937 rng = make_engine(trial);
    const auto candidates = eval::sample_eval_negatives(history, truth, num_items, k, rng);
    CHECK(candidates.back() == truth);
    std::unordered_set<int> seen;
    for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
      const int item = candidates[i];
      CHECK(!history.contains(item));
      CHECK(item != truth);
      CHECK(item >= 1);
      CHECK(item <= num_items);
      CHECK(!seen.contains(item));
      seen.insert(item);
    }

    std::mt19937 rng2 = make_engine(trial);
    CHECK(eval::sample_eval_negatives(history, truth, num_items, k, rng2) == candidates);
  }
}

TEST_CASE("saturated users rank against every other item") {
  std::unordered_set<int> everything;
  for (int i = 1; i <= 10; ++i) {
    everything.insert(i);
  }
  std::mt19937 rng = make_engine(29);
  const auto candidates = eval::sample_eval_negatives(everything, 7, 10, 1000, rng);
  CHECK(candidates.size() == 10);
  CHECK(candidates.back() == 7);
}

TEST_CASE("buckets partition values and label ranges") {
  const eval::Buckets buckets{{1, 4, 9, 19}};
  buckets.validate();
  CHECK(buckets.num_buckets() == 5);
  CHECK(buckets.bucket_of(0) == 0);
  CHECK(buckets.bucket_of(1) == 0);
  CHECK(buckets.bucket_of(2) == 1);
  CHECK(buckets.bucket_of(4) == 1);
  CHECK(buckets.bucket_of(19) == 3);
  CHECK(buckets.bucket_of(20) == 4);
  CHECK(buckets.bucket_of(5000) == 4);
  CHECK(buckets.label(0) == "0-1");
  CHECK(buckets.label(1) == "2-4");
  CHECK(buckets.label(4) == "20+");

  const eval::Buckets repeated{{4, 4}};
  CHECK_THROWS_AS(repeated.validate(), ConfigError);
  const eval::Buckets none{{}};
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("slice_metrics groups by train length and item frequency") {
  // users: u1 train {1,2} (len 2), u2 train {} (len 0), u3 train {2,3,4,5,6} (len 5)
  data::InteractionDataset ds;
  ds.user_names = {"", "u1", "u2", "u3"};
  ds.item_names = {"", "1", "2", "3", "4", "5", "6", "7"};
  ds.sequences = {{}, {1, 2, 7, 3}, {5, 6}, {2, 3, 4, 5, 6, 1, 7}};
  ds.num_actions = 13;
  const auto split = data::split_leave_one_out(ds);

  std::vector<RankingResult> results;
  results.push_back(with_rank(1, 1, split.users[1].test));
  results.push_back(with_rank(2, 3, split.users[2].test));
  results.push_back(with_rank(3, 6, split.users[3].test));

  const eval::Buckets lens{{1, 4}};
  const eval::Buckets freqs{{0, 1}};
  const auto report = eval::slice_metrics(results, split, lens, freqs);

  CHECK(report.global.mrr == doctest::Approx(0.5));
  REQUIRE(report.by_length.size() == 3);
  // u2 (train len 0) lands in the lowest bucket
  CHECK(report.by_length[0].metrics.has_value());
  CHECK(report.by_length[0].metrics->num_users == 1);
  CHECK(report.by_length[0].metrics->mrr == doctest::Approx(1.0 / 3));
  CHECK(report.by_length[1].metrics->num_users == 1);  // u1, len 2
  CHECK(report.by_length[2].metrics->num_users == 1);  // u3, len 5

  // test items: u1 -> 3 (train freq 1), u2 -> 6 (freq 1), u3 -> 7 (freq 0)
  REQUIRE(report.by_frequency.size() == 3);
  CHECK(report.by_frequency[0].metrics->num_users == 1);  // unseen item
  CHECK(report.by_frequency[0].metrics->mrr == doctest::Approx(1.0 / 6));
  CHECK(report.by_frequency[1].metrics->num_users == 2);
  CHECK(!report.by_frequency[2].metrics.has_value());  // empty, not zero

  // one catch-all bucket reproduces the global metrics
  const eval::Buckets everything{{1000000}};
  const auto loose = eval::slice_metrics(results, split, everything, everything);
  CHECK(loose.by_length[0].metrics->mrr == loose.global.mrr);
  CHECK(loose.by_length[0].metrics->num_users == 3);
}

TEST_CASE("rank_users is identical across worker counts and fixes seeds") {
  const auto split = cycle_split(12, 30, 6);
  const auto cfg = tiny_config(30);
  const model::ModelParams params = model::ModelParams::init(cfg, 33);

  eval::EvalOptions options;
  options.num_negatives = 4;
  options.seed = 99;
  options.workers = 1;
  const auto serial = eval::rank_users(params, cfg, split, options);
  options.workers = 4;
  const auto parallel = eval::rank_users(params, cfg, split, options);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].user == parallel[i].user);
    CHECK(serial[i].truth_rank == parallel[i].truth_rank);
    CHECK(serial[i].num_candidates == parallel[i].num_candidates);
  }

  options.seed = 100;
  options.keep_lists = true;
  const auto reseeded = eval::rank_users(params, cfg, split, options);
  options.seed = 99;
  const auto original = eval::rank_users(params, cfg, split, options);
  bool any_differs = false;
  for (std::size_t i = 0; i < serial.size(); ++i) {
    any_differs = any_differs || original[i].items != reseeded[i].items;
  }
  // 4 of ~24 legal negatives sampled: candidate sets almost surely moved
  CHECK(any_differs);
}

TEST_CASE("validation target drops users without a validation item") {
  data::InteractionDataset ds;
  ds.user_names = {"", "u1", "u2"};
  ds.item_names = {"", "1", "2", "3", "4"};
  ds.sequences = {{}, {1, 2, 3, 4}, {2}};
  ds.num_actions = 5;
  const auto split = data::split_leave_one_out(ds);
  const auto cfg = tiny_config(4);
  const model::ModelParams params = model::ModelParams::init(cfg, 35);

  eval::EvalOptions options;
  options.target = eval::EvalOptions::Target::valid;
  options.num_negatives = 2;
  const auto results = eval::rank_users(params, cfg, split, options);
  REQUIRE(results.size() == 1);
  CHECK(results[0].user == 1);
  CHECK(results[0].truth_item == split.users[1].valid);

  options.target = eval::EvalOptions::Target::test;
  const auto test_results = eval::rank_users(params, cfg, split, options);
  CHECK(test_results.size() == 2);
}

TEST_CASE("exhaustive mode ranks against all non-interacted items") {
  const auto split = cycle_split(4, 20, 5);
  const auto cfg = tiny_config(20);
  const model::ModelParams params = model::ModelParams::init(cfg, 37);
  eval::EvalOptions options;
  options.exhaustive = true;
  const auto results = eval::rank_users(params, cfg, split, options);
  for (const auto& r : results) {
    const auto& hist = split.history[static_cast<std::size_t>(r.user)];
    CHECK(r.num_candidates == 20 - static_cast<int>(hist.size()) + 1);
  }
}

TEST_CASE("report writers are deterministic and note the seed") {
  const auto split = cycle_split(8, 7, 5);
  const auto cfg = tiny_config(7);
  const model::ModelParams params = model::ModelParams::init(cfg, 39);
  eval::EvalOptions options;
  options.num_negatives = 3;
  options.seed = 4242;
  const auto report = eval::evaluate(params, cfg, split, options);

  std::ostringstream a, b, text;
  eval::write_report_machine(report, a);
  eval::write_report_machine(report, b);
  eval::write_report_text(report, text);
  CHECK(a.str() == b.str());
  CHECK(a.str().find("# seed\t4242") != std::string::npos);
  CHECK(a.str().find("recall@1\tall\t") != std::string::npos);
  CHECK(text.str().find("4242") != std::string::npos);
  CHECK(report.global.recall_at_1 <= report.global.recall_at_5);
}
