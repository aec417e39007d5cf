#include "gsr/data.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gsr/errors.hpp"
#include "gsr/rng.hpp"

namespace gsr::data {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) {
    throw DataError("truncated GSR-DS file");
  }
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) {
    throw DataError("truncated GSR-DS file");
  }
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) {
    throw DataError("truncated GSR-DS file");
  }
  return s;
}

bool parse_timestamp(const std::string& field, std::int64_t* out) {
  if (field.empty()) {
    return false;
  }
  std::size_t pos = 0;
  try {
    const long long v = std::stoll(field, &pos);
    if (pos != field.size() || v < 0) {
      return false;
    }
    *out = v;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

Interaction parse_delimited(const std::string& line, char delim, std::size_t line_no) {
  const auto fields = split_fields(line, delim);
  // Three columns user,item,timestamp; four columns are treated as the raw
  // ratings export user,item,rating,timestamp with the rating discarded.
  std::string user, item, ts_field;
  if (fields.size() == 3) {
    user = fields[0];
    item = fields[1];
    ts_field = fields[2];
  } else if (fields.size() == 4) {
    user = fields[0];
    item = fields[1];
    ts_field = fields[3];
  } else {
    throw DataError("line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                    std::to_string(fields.size()));
  }
  if (user.empty() || item.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": empty user or item field");
  }
  Interaction rec{user, item, 0};
  if (!parse_timestamp(ts_field, &rec.timestamp)) {
    // Float timestamps with no fractional part are accepted.
    try {
      const double d = std::stod(ts_field);
      if (d < 0.0 || d != static_cast<double>(static_cast<std::int64_t>(d))) {
        throw DataError("");
      }
      rec.timestamp = static_cast<std::int64_t>(d);
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(line_no) + ": bad timestamp '" + ts_field + "'");
    }
  }
  return rec;
}

std::string json_to_name(const nlohmann::json& v, std::size_t line_no, const char* key) {
  if (v.is_string()) {
    return v.get<std::string>();
  }
  if (v.is_number_integer()) {
    return std::to_string(v.get<std::int64_t>());
  }
  throw DataError("line " + std::to_string(line_no) + ": field '" + key +
                  "' must be a string or integer");
}

Interaction parse_jsonl(const std::string& line, std::size_t line_no) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
  }
  if (!obj.is_object() || !obj.contains("user") || !obj.contains("item") ||
      !obj.contains("timestamp")) {
    throw DataError("line " + std::to_string(line_no) +
                    ": object must have user, item, timestamp");
  }
  Interaction rec;
  rec.user = json_to_name(obj["user"], line_no, "user");
  rec.item = json_to_name(obj["item"], line_no, "item");
  const auto& ts = obj["timestamp"];
  if (ts.is_number_integer()) {
    rec.timestamp = ts.get<std::int64_t>();
  } else if (ts.is_number_float() &&
             ts.get<double>() == static_cast<double>(static_cast<std::int64_t>(ts.get<double>()))) {
    rec.timestamp = static_cast<std::int64_t>(ts.get<double>());
  } else {
    throw DataError("line " + std::to_string(line_no) + ": timestamp must be an integer");
  }
  if (rec.timestamp < 0) {
    throw DataError("line " + std::to_string(line_no) + ": negative timestamp");
  }
  if (rec.user.empty() || rec.item.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": empty user or item");
  }
  return rec;
}

}  // namespace

double InteractionDataset::density() const {
  const double denom = static_cast<double>(num_users()) * static_cast<double>(num_items());
  return denom > 0.0 ? static_cast<double>(num_actions) / denom : 0.0;
}

InteractionDataset load_interactions(std::istream& in, const LoadOptions& options) {
  char delim = options.delimiter;
  if (delim == 0) {
    delim = options.format == InputFormat::tsv ? '\t' : ',';
  }
  std::vector<Interaction> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    if (options.format == InputFormat::jsonl) {
      records.push_back(parse_jsonl(line, line_no));
    } else {
      records.push_back(parse_delimited(line, delim, line_no));
    }
  }
  if (records.empty()) {
    throw DataError("no interactions");
  }
  return build_dataset(std::move(records), options.count_floor);
}

InteractionDataset build_dataset(std::vector<Interaction> interactions, int count_floor) {
  if (interactions.empty()) {
    throw DataError("no interactions");
  }
  if (count_floor > 1) {
    std::unordered_map<std::string, int> item_counts;
    for (const auto& r : interactions) {
      ++item_counts[r.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(interactions.size());
    for (auto& r : interactions) {
      if (item_counts[r.item] >= count_floor) {
        kept.push_back(std::move(r));
      }
    }
    std::unordered_map<std::string, int> user_counts;
    for (const auto& r : kept) {
      ++user_counts[r.user];
    }
    interactions.clear();
    for (auto& r : kept) {
      if (user_counts[r.user] >= count_floor) {
        interactions.push_back(std::move(r));
      }
    }
    if (interactions.empty()) {
      throw DataError("no interactions after count floor " + std::to_string(count_floor));
    }
  }

  InteractionDataset ds;
  ds.user_names.push_back("");
  ds.item_names.push_back("");
  ds.sequences.emplace_back();

  struct Event {
    std::int64_t timestamp;
    std::size_t order;
    int item;
  };
  std::vector<std::vector<Event>> events(1);

  for (std::size_t i = 0; i < interactions.size(); ++i) {
    const auto& r = interactions[i];
    auto [uit, user_inserted] = ds.user_index.try_emplace(r.user, ds.num_users() + 1);
    if (user_inserted) {
      ds.user_names.push_back(r.user);
      ds.sequences.emplace_back();
      events.emplace_back();
    }
    auto [iit, item_inserted] = ds.item_index.try_emplace(r.item, ds.num_items() + 1);
    if (item_inserted) {
      ds.item_names.push_back(r.item);
    }
    events[static_cast<std::size_t>(uit->second)].push_back(
        Event{r.timestamp, i, iit->second});
  }

  ds.num_actions = interactions.size();
  for (int u = 1; u <= ds.num_users(); ++u) {
    auto& ev = events[static_cast<std::size_t>(u)];
    std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) {
      return a.timestamp < b.timestamp;  // ties keep input order
    });
    auto& seq = ds.sequences[static_cast<std::size_t>(u)];
    seq.reserve(ev.size());
    for (const Event& e : ev) {
      seq.push_back(e.item);
    }
  }
  return ds;
}

void InteractionDataset::save(std::ostream& out) const {
  out.write(kDatasetMagic, static_cast<std::streamsize>(std::string(kDatasetMagic).size()));
  write_u32(out, static_cast<std::uint32_t>(num_users()));
  write_u32(out, static_cast<std::uint32_t>(num_items()));
  write_u64(out, num_actions);
  for (int u = 1; u <= num_users(); ++u) {
    write_string(out, user_names[static_cast<std::size_t>(u)]);
  }
  for (int i = 1; i <= num_items(); ++i) {
    write_string(out, item_names[static_cast<std::size_t>(i)]);
  }
  for (int u = 1; u <= num_users(); ++u) {
    const auto& seq = sequences[static_cast<std::size_t>(u)];
    write_u32(out, static_cast<std::uint32_t>(seq.size()));
    for (int id : seq) {
      write_u32(out, static_cast<std::uint32_t>(id));
    }
  }
  if (!out) {
    throw DataError("failed to write dataset cache");
  }
}

InteractionDataset InteractionDataset::load(std::istream& in) {
  const std::string magic(kDatasetMagic);
  std::string header(magic.size(), '\0');
  in.read(header.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || header != magic) {
    throw DataError("not a GSR-DS file");
  }
  InteractionDataset ds;
  const std::uint32_t num_users = read_u32(in);
  const std::uint32_t num_items = read_u32(in);
  ds.num_actions = read_u64(in);
  ds.user_names.reserve(num_users + 1);
  ds.item_names.reserve(num_items + 1);
  ds.user_names.push_back("");
  ds.item_names.push_back("");
  for (std::uint32_t u = 1; u <= num_users; ++u) {
    std::string name = read_string(in);
    ds.user_index.emplace(name, static_cast<int>(u));
    ds.user_names.push_back(std::move(name));
  }
  for (std::uint32_t i = 1; i <= num_items; ++i) {
    std::string name = read_string(in);
    ds.item_index.emplace(name, static_cast<int>(i));
    ds.item_names.push_back(std::move(name));
  }
  ds.sequences.resize(num_users + 1);
  std::uint64_t actions = 0;
  for (std::uint32_t u = 1; u <= num_users; ++u) {
    const std::uint32_t len = read_u32(in);
    auto& seq = ds.sequences[u];
    seq.reserve(len);
    for (std::uint32_t k = 0; k < len; ++k) {
      const std::uint32_t id = read_u32(in);
      if (id == 0 || id > num_items) {
        throw DataError("GSR-DS file holds an out-of-range item id");
      }
      seq.push_back(static_cast<int>(id));
    }
    actions += len;
  }
  if (actions != ds.num_actions) {
    throw DataError("GSR-DS counts are inconsistent with the stored sequences");
  }
  return ds;
}

void InteractionDataset::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot open '" + path + "' for writing");
  }
  save(out);
}

InteractionDataset InteractionDataset::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open '" + path + "'");
  }
  return load(in);
}

std::vector<int> SplitDataset::full_sequence(int user) const {
  const UserSplit& s = users.at(static_cast<std::size_t>(user));
  std::vector<int> seq = s.train;
  if (s.valid != 0) {
    seq.push_back(s.valid);
  }
  if (s.test != 0) {
    seq.push_back(s.test);
  }
  return seq;
}

SplitDataset split_leave_one_out(const InteractionDataset& ds) {
  if (ds.num_users() == 0) {
    throw DataError("empty dataset");
  }
  SplitDataset split;
  split.num_items = ds.num_items();
  split.users.resize(static_cast<std::size_t>(ds.num_users()) + 1);
  split.history.resize(split.users.size());
  for (int u = 1; u <= ds.num_users(); ++u) {
    const auto& seq = ds.sequences[static_cast<std::size_t>(u)];
    UserSplit& s = split.users[static_cast<std::size_t>(u)];
    const std::size_t len = seq.size();
    if (len >= 1) {
      s.test = seq[len - 1];
    }
    if (len >= 2) {
      s.valid = seq[len - 2];
    }
    if (len >= 3) {
      s.train.assign(seq.begin(), seq.end() - 2);
    }
    auto& hist = split.history[static_cast<std::size_t>(u)];
    hist.insert(seq.begin(), seq.end());
  }
  return split;
}

std::vector<int> pad_or_truncate(std::span<const int> seq, int n) {
  if (n < 1) {
    throw std::invalid_argument("pad_or_truncate: n must be >= 1");
  }
  std::vector<int> out(static_cast<std::size_t>(n), 0);
  const std::size_t len = seq.size();
  if (len >= static_cast<std::size_t>(n)) {
    std::copy(seq.end() - n, seq.end(), out.begin());
  } else {
    std::copy(seq.begin(), seq.end(), out.begin() + (n - static_cast<int>(len)));
  }
  return out;
}

int sample_negative(const std::unordered_set<int>& history, int num_items, std::mt19937& rng) {
  if (static_cast<int>(history.size()) >= num_items) {
    throw DataError("sample_negative: history covers all items");
  }
  std::uniform_int_distribution<int> dist(1, num_items);
  // Rejection keeps the draw exactly uniform over legal items; fall back to
  // enumeration when the legal set is a tiny fraction.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int candidate = dist(rng);
    if (!history.contains(candidate)) {
      return candidate;
    }
  }
  std::vector<int> legal;
  legal.reserve(static_cast<std::size_t>(num_items) - history.size());
  for (int i = 1; i <= num_items; ++i) {
    if (!history.contains(i)) {
      legal.push_back(i);
    }
  }
  std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
  return legal[pick(rng)];
}

namespace {

// Negative for one position. Prefers the full-history exclusion; when the
// user has interacted with every item, falls back to excluding only the
// position's target so saturated fixtures remain trainable.
int position_negative(const std::unordered_set<int>& history, int target, int num_items,
                      std::mt19937& rng, bool* ok) {
  *ok = true;
  if (static_cast<int>(history.size()) < num_items) {
    return sample_negative(history, num_items, rng);
  }
  if (num_items < 2) {
    *ok = false;
    return 0;
  }
  std::uniform_int_distribution<int> dist(1, num_items);
  while (true) {
    const int candidate = dist(rng);
    if (candidate != target) {
      return candidate;
    }
  }
}

void user_training_rows(const UserSplit& s, const BatchOptions& options,
                        std::vector<int>* inputs, std::vector<int>* targets) {
  inputs->clear();
  targets->clear();
  const auto& train = s.train;
  if (options.include_valid_target && s.valid != 0) {
    // Inputs are the train prefix; each target is the successor, ending in
    // the validation item.
    if (train.empty()) {
      return;
    }
    inputs->assign(train.begin(), train.end());
    targets->assign(train.begin() + 1, train.end());
    targets->push_back(s.valid);
  } else {
    if (train.size() < 2) {
      return;
    }
    inputs->assign(train.begin(), train.end() - 1);
    targets->assign(train.begin() + 1, train.end());
  }
}

}  // namespace

SequenceBatch make_training_batch(const SplitDataset& split, std::span<const int> user_ids,
                                  int n, std::uint64_t seed, const BatchOptions& options) {
  if (n < 1) {
    throw std::invalid_argument("make_training_batch: n must be >= 1");
  }
  SequenceBatch batch;
  batch.batch = static_cast<int>(user_ids.size());
  batch.seq_len = n;
  const std::size_t total = static_cast<std::size_t>(batch.batch) * n;
  batch.input_ids.assign(total, 0);
  batch.target_ids.assign(total, 0);
  batch.negative_ids.assign(total, 0);
  batch.valid_mask.assign(total, 0);

  std::mt19937 rng = make_engine(seed);
  std::vector<int> inputs, targets;
  for (int b = 0; b < batch.batch; ++b) {
    const int user = user_ids[static_cast<std::size_t>(b)];
    if (user < 1 || user > split.num_users()) {
      throw DataError("make_training_batch: unknown user id " + std::to_string(user));
    }
    const UserSplit& s = split.users[static_cast<std::size_t>(user)];
    user_training_rows(s, options, &inputs, &targets);
    if (inputs.empty()) {
      continue;
    }
    const auto padded_input = pad_or_truncate(inputs, n);
    const auto padded_target = pad_or_truncate(targets, n);
    const auto& hist = split.history[static_cast<std::size_t>(user)];
    for (int t = 0; t < n; ++t) {
      batch.input(b, t) = padded_input[static_cast<std::size_t>(t)];
      const int target = padded_target[static_cast<std::size_t>(t)];
      batch.target(b, t) = target;
      if (target == 0) {
        continue;
      }
      bool ok = false;
      const int neg = position_negative(hist, target, split.num_items, rng, &ok);
      if (!ok) {
        continue;
      }
      batch.negative(b, t) = neg;
      batch.valid_mask[static_cast<std::size_t>(b) * n + t] = 1;
    }
  }
  return batch;
}

int SequenceBatch::num_valid() const {
  int count = 0;
  for (std::uint8_t m : valid_mask) {
    count += m;
  }
  return count;
}

int count_trainable_positions(const SplitDataset& split, const BatchOptions& options) {
  int total = 0;
  std::vector<int> inputs, targets;
  for (int u = 1; u <= split.num_users(); ++u) {
    user_training_rows(split.users[static_cast<std::size_t>(u)], options, &inputs, &targets);
    total += static_cast<int>(targets.size());
  }
  return total;
}

}  // namespace gsr::data
