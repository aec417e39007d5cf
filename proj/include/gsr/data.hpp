#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace gsr::data {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
};

enum class InputFormat { csv, tsv, jsonl };

struct LoadOptions {
  InputFormat format = InputFormat::csv;
  // 0 means "use the format's default" (',' for csv, '\t' for tsv).
  char delimiter = 0;
  // Drops items with fewer interactions than the floor, then users whose
  // remaining sequence is shorter than the floor. 0 disables filtering.
  int count_floor = 0;
};

/// Interactions indexed densely: user ids 1..num_users, item ids 1..num_items,
/// item id 0 reserved for padding. Per-user item lists are time-ordered with
/// ties broken by input order.
struct InteractionDataset {
  std::vector<std::string> user_names;  // [0] unused
  std::vector<std::string> item_names;  // [0] unused (padding)
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;
  std::vector<std::vector<int>> sequences;  // [0] unused
  std::uint64_t num_actions = 0;

  int num_users() const { return static_cast<int>(user_names.size()) - 1; }
  int num_items() const { return static_cast<int>(item_names.size()) - 1; }
  double density() const;

  void save(std::ostream& out) const;
  static InteractionDataset load(std::istream& in);
  void save_file(const std::string& path) const;
  static InteractionDataset load_file(const std::string& path);
};

inline constexpr const char* kDatasetMagic = "GSR-DS v1\n";

InteractionDataset load_interactions(std::istream& in, const LoadOptions& options = {});
InteractionDataset build_dataset(std::vector<Interaction> interactions, int count_floor = 0);

/// Leave-one-out split: last interaction for test, second-to-last for
/// validation, the rest for training. Users with fewer than 3 interactions
/// are assigned tail-first (test, then validation), keeping them evaluable.
struct UserSplit {
  std::vector<int> train;
  int valid = 0;  // 0 = absent
  int test = 0;   // 0 = absent
};

struct SplitDataset {
  std::vector<UserSplit> users;  // [0] unused
  std::vector<std::unordered_set<int>> history;  // full train+valid+test sets
  int num_items = 0;

  int num_users() const { return static_cast<int>(users.size()) - 1; }
  std::vector<int> full_sequence(int user) const;
};

SplitDataset split_leave_one_out(const InteractionDataset& ds);

/// Keeps the most recent n entries, or left-pads with id 0 up to length n.
std::vector<int> pad_or_truncate(std::span<const int> seq, int n);

/// Fixed-length training batch. Row b left-pads user b's inputs; target[b,t]
/// is the item following input[b,t] and valid_mask marks positions whose
/// target is a real item with a usable negative.
struct SequenceBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<std::int32_t> input_ids;
  std::vector<std::int32_t> target_ids;
  std::vector<std::int32_t> negative_ids;
  std::vector<std::uint8_t> valid_mask;

  std::int32_t& input(int b, int t) { return input_ids[idx(b, t)]; }
  std::int32_t input(int b, int t) const { return input_ids[idx(b, t)]; }
  std::int32_t& target(int b, int t) { return target_ids[idx(b, t)]; }
  std::int32_t target(int b, int t) const { return target_ids[idx(b, t)]; }
  std::int32_t& negative(int b, int t) { return negative_ids[idx(b, t)]; }
  std::int32_t negative(int b, int t) const { return negative_ids[idx(b, t)]; }
  bool valid(int b, int t) const { return valid_mask[idx(b, t)] != 0; }
  std::span<const std::int32_t> input_row(int b) const {
    return {input_ids.data() + idx(b, 0), static_cast<std::size_t>(seq_len)};
  }
  int num_valid() const;

 private:
  std::size_t idx(int b, int t) const {
    return static_cast<std::size_t>(b) * seq_len + t;
  }
};

struct BatchOptions {
  // When set, the validation item is the final training target and the full
  // train prefix is the input context; otherwise training stops one step
  // earlier so the validation item is never trained on.
  bool include_valid_target = true;
};

SequenceBatch make_training_batch(const SplitDataset& split, std::span<const int> user_ids,
                                  int n, std::uint64_t seed, const BatchOptions& options = {});

/// Uniform draw from items the user never interacted with (never 0). Throws
/// DataError when the history covers every item.
int sample_negative(const std::unordered_set<int>& history, int num_items, std::mt19937& rng);

int count_trainable_positions(const SplitDataset& split, const BatchOptions& options = {});

}  // namespace gsr::data
