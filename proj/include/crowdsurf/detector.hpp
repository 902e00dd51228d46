/*
Copyright (C) 2026 The crowdsurf authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

// Automatic third-party tracker identification: indexes (hostname, key)
// query pairs observed on third-party requests and emits the pairs whose
// values stand in one-to-one correspondence with user identifiers.

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdsurf/trace.hpp"
#include "crowdsurf/util.hpp"

namespace crowdsurf {

struct PairKey {
  std::string hostname;
  std::string key;

  auto operator<=>(const PairKey&) const = default;
};

// Per-(hostname, key) view of the two hash indexes. The maps are transposes
// of each other: u in users_by_value[v] iff v in values_by_user[u].
struct PairStats {
  std::map<std::string, std::set<std::string>> values_by_user;
  std::map<std::string, std::set<std::string>> users_by_value;

  std::size_t support() const { return values_by_user.size(); }

  bool transpose_consistent() const {
    for (const auto& [user, values] : values_by_user)
      for (const auto& v : values) {
        auto it = users_by_value.find(v);
        if (it == users_by_value.end() || !it->second.count(user)) return false;
      }
    for (const auto& [value, users] : users_by_value)
      for (const auto& u : users) {
        auto it = values_by_user.find(u);
        if (it == values_by_user.end() || !it->second.count(value)) return false;
      }
    return true;
  }
};

struct PairIndex {
  std::map<PairKey, PairStats> pairs;

  void add(std::string_view hostname, std::string_view key, std::string_view user,
           std::string_view value) {
    PairStats& st = pairs[PairKey{std::string(hostname), std::string(key)}];
    st.values_by_user[std::string(user)].insert(std::string(value));
    st.users_by_value[std::string(value)].insert(std::string(user));
  }

  // Set-union merge; associative and commutative, so shards can be folded
  // in any order.
  void merge(PairIndex&& other) {
    for (auto& [pk, st] : other.pairs) {
      auto [it, inserted] = pairs.try_emplace(pk, std::move(st));
      if (inserted) continue;
      for (auto& [user, values] : st.values_by_user)
        it->second.values_by_user[user].insert(values.begin(), values.end());
      for (auto& [value, users] : st.users_by_value)
        it->second.users_by_value[value].insert(users.begin(), users.end());
    }
  }

  bool transpose_consistent() const {
    for (const auto& [pk, st] : pairs)
      if (!st.transpose_consistent()) return false;
    return true;
  }
};

inline void index_record(PairIndex& idx, const HttpRequestRecord& r, std::string_view target) {
  if (!is_third_party(r, target)) return;
  for (const QueryParam& p : extract_query_params(r.path))
    idx.add(r.hostname, p.key, r.user, p.value);
}

inline PairIndex build_index(std::span<const HttpRequestRecord> records,
                             std::string_view target) {
  unsigned workers = std::thread::hardware_concurrency();
  if (workers > 1 && records.size() >= 100000) {
    std::size_t shard = (records.size() + workers - 1) / workers;
    std::vector<PairIndex> parts(workers);
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        std::size_t begin = w * shard;
        std::size_t end = std::min(records.size(), begin + shard);
        for (std::size_t i = begin; i < end; ++i) index_record(parts[w], records[i], target);
      });
    }
    for (auto& t : threads) t.join();
    PairIndex idx;
    for (auto& p : parts) idx.merge(std::move(p));
    return idx;
  }
  PairIndex idx;
  for (const auto& r : records) index_record(idx, r, target);
  return idx;
}

struct TrackerFinding {
  std::string hostname;
  std::string key;
  std::size_t distinct_users = 0;
  std::size_t distinct_values = 0;

  auto operator<=>(const TrackerFinding&) const = default;
};

enum class DetectMode { Strict, Literal };

// Strict (default): the user-to-value relation must be a bijection on the
// pair's whole support. Literal: one user with a single value that maps
// back to that user alone is enough, which is how the per-entry check of
// the original algorithm behaves. Either way the pair needs at least
// min_support distinct users.
inline std::vector<TrackerFinding> detect(const PairIndex& idx, std::size_t min_support,
                                          DetectMode mode = DetectMode::Strict) {
  if (min_support < 1) throw DomainError("min_support must be >= 1");
  std::vector<TrackerFinding> findings;
  for (const auto& [pk, st] : idx.pairs) {
    if (st.support() < min_support) continue;
    bool hit = false;
    if (mode == DetectMode::Strict) {
      hit = std::all_of(st.values_by_user.begin(), st.values_by_user.end(),
                        [](const auto& e) { return e.second.size() == 1; }) &&
            std::all_of(st.users_by_value.begin(), st.users_by_value.end(),
                        [](const auto& e) { return e.second.size() == 1; });
    } else {
      for (const auto& [user, values] : st.values_by_user) {
        if (values.size() != 1) continue;
        const auto& owners = st.users_by_value.at(*values.begin());
        if (owners.size() == 1 && *owners.begin() == user) {
          hit = true;
          break;
        }
      }
    }
    if (hit)
      findings.push_back(
          {pk.hostname, pk.key, st.support(), st.users_by_value.size()});
  }
  return findings;  // map order == sorted by (hostname, key)
}

inline std::vector<TrackerFinding> detect_from_trace(std::span<const HttpRequestRecord> records,
                                                     std::string_view target,
                                                     std::size_t min_support,
                                                     DetectMode mode = DetectMode::Strict) {
  return detect(build_index(records, target), min_support, mode);
}

inline std::string findings_to_tsv(std::span<const TrackerFinding> findings) {
  std::string out;
  for (const auto& f : findings) {
    out += f.hostname;
    out += '\t';
    out += f.key;
    out += '\t';
    out += std::to_string(f.distinct_users);
    out += '\t';
    out += std::to_string(f.distinct_values);
    out += '\n';
  }
  return out;
}

inline nlohmann::json findings_to_json(std::span<const TrackerFinding> findings) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : findings)
    arr.push_back({{"hostname", f.hostname},
                   {"key", f.key},
                   {"distinct_users", f.distinct_users},
                   {"distinct_values", f.distinct_values}});
  return arr;
}

struct PrevalenceEntry {
  std::string hostname;
  std::size_t users = 0;
  double fraction = 0;
};

// Fraction of distinct users contacting each tracker hostname at least
// once, sorted by descending fraction.
inline std::vector<PrevalenceEntry> prevalence(std::span<const HttpRequestRecord> records,
                                               std::span<const std::string> trackers) {
  std::set<std::string> all_users;
  for (const auto& r : records) all_users.insert(r.user);
  if (all_users.empty()) throw DomainError("prevalence undefined over an empty trace");
  std::vector<PrevalenceEntry> out;
  out.reserve(trackers.size());
  for (const auto& t : trackers) {
    std::set<std::string> users;
    for (const auto& r : records)
      if (hostname_matches_suffix(r.hostname, t)) users.insert(r.user);
    out.push_back({t, users.size(),
                   static_cast<double>(users.size()) / static_cast<double>(all_users.size())});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.fraction > b.fraction; });
  return out;
}

}  // namespace crowdsurf
