// Deterministic-cycle fixtures shared by the training tests and the
// acceptance suite: every user's sequence is a rotation of the item cycle
// 1 -> 2 -> ... -> num_items -> 1, so the next item is always unique.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "gsr/data.hpp"

namespace synthetic {

inline gsr::data::InteractionDataset cycle_dataset(int num_users, int num_items, int length) {
  std::vector<gsr::data::Interaction> records;
  records.reserve(static_cast<std::size_t>(num_users) * length);
  for (int u = 0; u < num_users; ++u) {
    const int start = u % num_items;
    for (int t = 0; t < length; ++t) {
      records.push_back({"u" + std::to_string(u),
                         "i" + std::to_string((start + t) % num_items + 1),
                         static_cast<std::int64_t>(t)});
    }
  }
  return gsr::data::build_dataset(std::move(records));
}

inline void write_cycle_csv(const std::string& path, int num_users, int num_items, int length) {
  std::ofstream out(path);
  for (int u = 0; u < num_users; ++u) {
    const int start = u % num_items;
    for (int t = 0; t < length; ++t) {
      out << "u" << u << ",i" << (start + t) % num_items + 1 << "," << t << "\n";
    }
  }
}

}  // namespace synthetic
