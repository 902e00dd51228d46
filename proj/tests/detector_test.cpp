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

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "crowdsurf/detector.hpp"

using namespace crowdsurf;

namespace {

HttpRequestRecord make(std::string user, std::string hostname, std::string path,
                       std::string referer) {
  HttpRequestRecord r;
  r.ts = 1000;
  r.user = std::move(user);
  r.method = "GET";
  r.hostname = std::move(hostname);
  r.path = std::move(path);
  r.referer = std::move(referer);
  return r;
}

// Brute-force oracle, independent of PairIndex: collect the raw
// (user, value) relation per (hostname, key) and test bijectivity on it.
std::vector<TrackerFinding> oracle_detect(std::span<const HttpRequestRecord> records,
                                          std::string_view target, std::size_t min_support) {
  std::map<std::pair<std::string, std::string>, std::set<std::pair<std::string, std::string>>>
      relation;
  for (const auto& r : records) {
    if (!is_third_party(r, target)) continue;
    for (const auto& p : extract_query_params(r.path))
      relation[{r.hostname, p.key}].insert({r.user, p.value});
  }
  std::vector<TrackerFinding> out;
  for (const auto& [hk, pairs] : relation) {
    std::map<std::string, std::set<std::string>> per_user, per_value;
    for (const auto& [u, v] : pairs) {
      per_user[u].insert(v);
      per_value[v].insert(u);
    }
    if (per_user.size() < min_support) continue;
    bool bijective = true;
    for (const auto& [u, vs] : per_user)
      if (vs.size() != 1) bijective = false;
    for (const auto& [v, us] : per_value)
      if (us.size() != 1) bijective = false;
    if (bijective)
      out.push_back({hk.first, hk.second, per_user.size(), per_value.size()});
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Random small instance: <= 50 users, <= 20 (hostname, key) pairs, <= 5
// values per user, plus first-party and referer-less noise.
std::vector<HttpRequestRecord> random_instance(std::mt19937_64& rng) {
  std::vector<HttpRequestRecord> records;
  std::size_t n_users = 1 + rng() % 50;
  std::size_t n_pairs = 1 + rng() % 20;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    std::string host = "h" + std::to_string(p % 7) + ".example";
    std::string key = "k" + std::to_string(p);
    int kind = rng() % 4;  // 0 bijective, 1 constant, 2 noisy per user, 3 random
    for (std::size_t u = 0; u < n_users; ++u) {
      if (rng() % 4 == 0) continue;  // this user never hits the pair
      std::string user = "u" + std::to_string(u);
      std::size_t repeats = 1 + rng() % 3;
      for (std::size_t rep = 0; rep < repeats; ++rep) {
        std::string value;
        switch (kind) {
          case 0: value = "id-" + std::to_string(u); break;
          case 1: value = "const"; break;
          case 2: value = "v" + std::to_string(u) + "-" + std::to_string(rng() % 5); break;
          default: value = "r" + std::to_string(rng() % (n_users * 2)); break;
        }
        records.push_back(make(user, host, "/t?" + key + "=" + value,
                               "http://www.target.example/page"));
      }
    }
  }
  // noise that must be ignored
  records.push_back(make("u0", "www.target.example", "/t?k0=selfref", ""));
  records.push_back(make("u1", "h0.example", "/t?k0=noreferer", ""));
  std::shuffle(records.begin(), records.end(), rng);
  return records;
}

std::vector<HttpRequestRecord> planted_bijection(std::size_t users, const std::string& host,
                                                 const std::string& key) {
  std::vector<HttpRequestRecord> records;
  for (std::size_t u = 0; u < users; ++u)
    records.push_back(make("user" + std::to_string(u), host,
                           "/px?" + key + "=tok" + std::to_string(1000 + u),
                           "http://www.youtube.com/watch?v=1"));
  return records;
}

}  // namespace

TEST_CASE("build_index keeps only third-party records and collapses duplicates") {
  std::vector<HttpRequestRecord> records;
  records.push_back(make("u1", "www.acme.com", "/query?key1=u1secret",
                         "http://news1.example/"));
  records.push_back(make("u2", "www.acme.com", "/query?key1=u2secret",
                         "http://news1.example/"));
  // first-party: contributes nothing
  records.push_back(make("u1", "www.news1.example", "/query?key1=ignored",
                         "http://news1.example/"));

  auto idx = build_index(records, "news1.example");
  REQUIRE(idx.pairs.size() == 1);
  const auto& st = idx.pairs.at(PairKey{"www.acme.com", "key1"});
  CHECK(st.values_by_user.size() == 2);
  CHECK(st.users_by_value.size() == 2);
  for (const auto& [u, vs] : st.values_by_user) CHECK(vs.size() == 1);
  for (const auto& [v, us] : st.users_by_value) CHECK(us.size() == 1);
  CHECK(st.support() == 2);
  CHECK(idx.transpose_consistent());
}

TEST_CASE("repeating the same user/host/key/value is idempotent") {
  std::vector<HttpRequestRecord> records;
  for (int i = 0; i < 10; ++i)
    records.push_back(make("u1", "t.example", "/p?uid=stable", "http://site.example/"));
  auto idx = build_index(records, "site.example");
  const auto& st = idx.pairs.at(PairKey{"t.example", "uid"});
  CHECK(st.values_by_user.size() == 1);
  CHECK(st.values_by_user.begin()->second.size() == 1);
  CHECK(st.users_by_value.size() == 1);
}

TEST_CASE("detect finds a planted bijection with enough support") {
  auto records = planted_bijection(30, "tracker.example", "uid");
  auto findings = detect_from_trace(records, "youtube.com", 25);
  REQUIRE(findings.size() == 1);
  CHECK(findings[0].hostname == "tracker.example");
  CHECK(findings[0].key == "uid");
  CHECK(findings[0].distinct_users == 30);
  CHECK(findings[0].distinct_values == 30);
}

TEST_CASE("a constant value shared by every user is not a tracker key") {
  std::vector<HttpRequestRecord> records;
  for (int u = 0; u < 30; ++u)
    records.push_back(make("user" + std::to_string(u), "cdn.example", "/p?lang=en",
                           "http://www.youtube.com/"));
  CHECK(detect_from_trace(records, "youtube.com", 25).empty());
  CHECK(detect_from_trace(records, "youtube.com", 1).empty());
}

TEST_CASE("min-support excludes a bijective key below the threshold") {
  auto records24 = planted_bijection(24, "t.example", "uid");
  CHECK(detect_from_trace(records24, "youtube.com", 25).empty());
  auto records25 = planted_bijection(25, "t.example", "uid");
  auto findings = detect_from_trace(records25, "youtube.com", 25);
  REQUIRE(findings.size() == 1);
  CHECK(findings[0].distinct_users == 25);
}

TEST_CASE("detect_from_trace on an empty trace") {
  CHECK(detect_from_trace({}, "youtube.com", 25).empty());
}

TEST_CASE("strict vs literal on a user with two values") {
  std::vector<HttpRequestRecord> records;
  // u1 is unstable (two values); u2 and u3 are cleanly bijective
  records.push_back(make("u1", "t.example", "/p?id=a1", "http://www.site.example/"));
  records.push_back(make("u1", "t.example", "/p?id=a2", "http://www.site.example/"));
  records.push_back(make("u2", "t.example", "/p?id=b", "http://www.site.example/"));
  records.push_back(make("u3", "t.example", "/p?id=c", "http://www.site.example/"));

  CHECK(detect_from_trace(records, "site.example", 1, DetectMode::Strict).empty());
  auto literal = detect_from_trace(records, "site.example", 1, DetectMode::Literal);
  REQUIRE(literal.size() == 1);
  CHECK(literal[0].distinct_users == 3);
  CHECK(literal[0].distinct_values == 4);
}

TEST_CASE("strict mode equals the brute-force oracle on random instances") {
  std::mt19937_64 rng(20260810);
  for (int i = 0; i < 300; ++i) {
    auto records = random_instance(rng);
    std::size_t min_support = 1 + rng() % 30;
    auto got = detect_from_trace(records, "target.example", min_support, DetectMode::Strict);
    auto want = oracle_detect(records, "target.example", min_support);
    REQUIRE(got == want);
  }
}

TEST_CASE("every strict finding is also a literal finding") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    auto records = random_instance(rng);
    auto strict = detect_from_trace(records, "target.example", 2, DetectMode::Strict);
    auto literal = detect_from_trace(records, "target.example", 2, DetectMode::Literal);
    std::set<std::pair<std::string, std::string>> literal_keys;
    for (const auto& f : literal) literal_keys.insert({f.hostname, f.key});
    for (const auto& f : strict) REQUIRE(literal_keys.count({f.hostname, f.key}) == 1);
  }
}

TEST_CASE("record order never changes findings") {
  std::mt19937_64 rng(99);
  auto records = random_instance(rng);
  auto base = detect_from_trace(records, "target.example", 3);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(records.begin(), records.end(), rng);
    REQUIRE(detect_from_trace(records, "target.example", 3) == base);
  }
}

TEST_CASE("transpose invariant holds after every build") {
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 50; ++i) {
    auto records = random_instance(rng);
    REQUIRE(build_index(records, "target.example").transpose_consistent());
  }
}

TEST_CASE("removing records never increases a finding's support") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto records = random_instance(rng);
    auto full = build_index(records, "target.example");
    std::vector<HttpRequestRecord> subset;
    for (const auto& r : records)
      if (rng() % 3) subset.push_back(r);
    auto sub = build_index(subset, "target.example");
    for (const auto& [pk, st] : sub.pairs) {
      auto it = full.pairs.find(pk);
      REQUIRE(it != full.pairs.end());
      REQUIRE(st.support() <= it->second.support());
    }
  }
}

TEST_CASE("index shards merge to the same result") {
  std::mt19937_64 rng(31);
  auto records = random_instance(rng);
  auto whole = build_index(records, "target.example");
  std::size_t half = records.size() / 2;
  auto left = build_index(std::span(records).first(half), "target.example");
  auto right = build_index(std::span(records).subspan(half), "target.example");
  left.merge(std::move(right));
  REQUIRE(detect(left, 1) == detect(whole, 1));
  REQUIRE(left.transpose_consistent());
}

TEST_CASE("findings serialize to sorted TSV") {
  auto records = planted_bijection(26, "b.example", "uid");
  auto more = planted_bijection(26, "a.example", "sid");
  records.insert(records.end(), more.begin(), more.end());
  auto findings = detect_from_trace(records, "youtube.com", 25);
  REQUIRE(findings.size() == 2);
  CHECK(findings_to_tsv(findings) ==
        "a.example\tsid\t26\t26\nb.example\tuid\t26\t26\n");
  auto j = findings_to_json(findings);
  REQUIRE(j.size() == 2);
  CHECK(j[0]["hostname"] == "a.example");
  CHECK(j[1]["distinct_users"] == 26);
}

TEST_CASE("prevalence counts distinct users per tracker") {
  std::vector<HttpRequestRecord> records;
  for (int u = 0; u < 10; ++u) {
    std::string user = "u" + std::to_string(u);
    records.push_back(make(user, "site.example", "/", ""));
    if (u < 9) records.push_back(make(user, "ad.doubleclick.net", "/px", ""));
    if (u < 9) records.push_back(make(user, "ad.doubleclick.net", "/px2", ""));  // dup visit
  }
  std::vector<std::string> trackers = {"doubleclick.net", "absent.example"};
  auto entries = prevalence(records, trackers);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].hostname == "doubleclick.net");
  CHECK(entries[0].fraction == Catch::Approx(0.9));
  CHECK(entries[1].hostname == "absent.example");
  CHECK(entries[1].fraction == 0.0);
}

TEST_CASE("prevalence rejects an empty trace") {
  CHECK_THROWS_AS(prevalence({}, std::vector<std::string>{"x.example"}), DomainError);
}

TEST_CASE("prevalence recovers planted contact probabilities") {
  const double planted[3] = {0.988, 0.987, 0.974};
  const std::string trackers[3] = {"t1.example", "t2.example", "t3.example"};
  std::mt19937_64 rng(515151);
  std::vector<HttpRequestRecord> records;
  for (int u = 0; u < 10000; ++u) {
    std::string user = "u" + std::to_string(u);
    records.push_back(make(user, "portal.example", "/", ""));
    for (int t = 0; t < 3; ++t)
      if (unit_double(rng()) < planted[t])
        records.push_back(make(user, "px." + trackers[t], "/b", ""));
  }
  std::vector<std::string> list(trackers, trackers + 3);
  auto entries = prevalence(records, list);
  REQUIRE(entries.size() == 3);
  for (const auto& e : entries) {
    int t = e.hostname == trackers[0] ? 0 : e.hostname == trackers[1] ? 1 : 2;
    REQUIRE(std::abs(e.fraction - planted[t]) <= 0.01);
  }
  // sorted descending
  CHECK(entries[0].fraction >= entries[1].fraction);
  CHECK(entries[1].fraction >= entries[2].fraction);
}
