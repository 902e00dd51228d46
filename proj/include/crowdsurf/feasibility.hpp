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

// Data-collection feasibility: the Newman-Shepp coupon-collector closed
// form, a Monte Carlo oracle for it, a Zipf workload generator, and the
// trace-driven time-to-K-samples simulator with client sampling.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "crowdsurf/trace.hpp"
#include "crowdsurf/util.hpp"

namespace crowdsurf {

struct CouponParams {
  std::uint64_t hostnames = 0;  // N
  std::uint64_t required = 1;   // K
};

// E[V] = N ln N + (K-1) N ln ln N, natural logs, with the O(N) remainder
// taken as zero. An asymptotic expectation, not an exact count; callers
// that need the exact value should use the Monte Carlo oracle instead.
inline double expected_visits(const CouponParams& p) {
  if (p.hostnames < 3) throw DomainError("expected_visits requires N >= 3");
  if (p.required < 1) throw DomainError("expected_visits requires K >= 1");
  double n = static_cast<double>(p.hostnames);
  double k = static_cast<double>(p.required);
  return n * std::log(n) + (k - 1.0) * n * std::log(std::log(n));
}

// Inverse-CDF sampler over ranks 1..n with weight rank^(-s). One uniform
// per draw and a binary search keep it deterministic across platforms.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s) : exponent_(s) {
    if (n < 1) throw DomainError("zipf sampler requires n >= 1");
    if (!(s > 0) || !std::isfinite(s)) throw DomainError("zipf exponent must be > 0");
    cumulative_.resize(n);
    double total = 0;
    for (std::uint64_t r = 1; r <= n; ++r) {
      total += std::pow(static_cast<double>(r), -s);
      cumulative_[r - 1] = total;
    }
    total_ = total;
  }

  // 0-based rank index; rank 0 is the most popular.
  std::size_t operator()(std::mt19937_64& rng) const {
    double u = unit_double(rng()) * total_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  double probability(std::size_t rank_index) const {
    double w = std::pow(static_cast<double>(rank_index + 1), -exponent_);
    return w / total_;
  }

  std::size_t size() const { return cumulative_.size(); }
  double exponent() const { return exponent_; }

 private:
  std::vector<double> cumulative_;
  double total_ = 0;
  double exponent_ = 0;
};

enum class VisitDist { Uniform, Zipf };

struct CouponSimResult {
  double mean_visits = 0;
  double stddev = 0;
};

// Draws hostnames i.i.d. until every one of the N has at least K draws;
// repeated `runs` times. Valid for any N >= 1.
inline CouponSimResult simulate_coupon(std::uint64_t n, std::uint64_t k, VisitDist dist,
                                       double zipf_s, std::uint32_t runs, std::uint64_t seed) {
  if (n < 1) throw DomainError("simulate_coupon requires N >= 1");
  if (k < 1) throw DomainError("simulate_coupon requires K >= 1");
  if (runs < 1) throw DomainError("simulate_coupon requires runs >= 1");
  const ZipfSampler* zipf = nullptr;
  ZipfSampler sampler = dist == VisitDist::Zipf ? ZipfSampler(n, zipf_s) : ZipfSampler(1, 1.0);
  if (dist == VisitDist::Zipf) zipf = &sampler;

  std::vector<double> totals(runs);
  std::vector<std::uint32_t> counts(n);
  for (std::uint32_t run = 0; run < runs; ++run) {
    std::mt19937_64 rng(keyed_u64(seed, run));
    std::fill(counts.begin(), counts.end(), 0);
    std::uint64_t satisfied = 0;
    std::uint64_t draws = 0;
    while (satisfied < n) {
      std::size_t idx;
      if (zipf) {
        idx = (*zipf)(rng);
      } else {
        double u = unit_double(rng());
        idx = std::min<std::size_t>(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
      }
      ++draws;
      if (counts[idx] < k && ++counts[idx] == k) ++satisfied;
    }
    totals[run] = static_cast<double>(draws);
  }

  CouponSimResult res;
  for (double t : totals) res.mean_visits += t;
  res.mean_visits /= runs;
  if (runs > 1) {
    double ss = 0;
    for (double t : totals) ss += (t - res.mean_visits) * (t - res.mean_visits);
    res.stddev = std::sqrt(ss / (runs - 1));
  }
  return res;
}

struct ZipfTraceSpec {
  std::uint64_t hostnames = 1000;
  double exponent = 1.0;    // visit probability of rank r proportional to r^(-exponent)
  std::uint64_t users = 100;
  double rate = 10.0;       // mean requests per second (Poisson arrivals)
  double duration = 3600;   // seconds
  std::uint64_t seed = 0;
};

inline void validate(const ZipfTraceSpec& spec) {
  if (spec.hostnames < 1) throw DomainError("trace spec requires hostnames >= 1");
  if (spec.users < 1) throw DomainError("trace spec requires users >= 1");
  if (!(spec.rate > 0) || !std::isfinite(spec.rate))
    throw DomainError("trace spec requires rate > 0");
  if (spec.duration < 0 || !std::isfinite(spec.duration))
    throw DomainError("trace spec requires duration >= 0");
  if (!(spec.exponent > 0)) throw DomainError("trace spec requires exponent > 0");
}

// Writes a trace with Poisson arrivals, Zipf-distributed hostnames
// host-000001..host-N and users drawn uniformly from the pool. Output is
// byte-identical for equal specs.
inline std::size_t generate_zipf_trace(const ZipfTraceSpec& spec, const std::string& out_path) {
  validate(spec);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  ZipfSampler zipf(spec.hostnames, spec.exponent);
  std::mt19937_64 rng(spec.seed);
  double t = 0;
  std::size_t count = 0;
  while (true) {
    double u = unit_double(rng());
    t += -std::log1p(-u) / spec.rate;
    if (t >= spec.duration) break;
    std::size_t rank = zipf(rng);
    std::uint64_t user =
        std::min<std::uint64_t>(spec.users - 1,
                                static_cast<std::uint64_t>(unit_double(rng()) *
                                                           static_cast<double>(spec.users)));
    out << fmt::format("{}\tuser-{:05}\tGET\thost-{:06}\t/\t\n", t, user + 1, rank + 1);
    ++count;
  }
  if (!out) throw IoError("write failed: " + out_path);
  return count;
}

struct HostnameCollection {
  std::string hostname;
  std::size_t rank = 0;       // 1-based popularity rank
  std::uint64_t visits = 0;
  double mean_tc = std::numeric_limits<double>::quiet_NaN();  // NaN when never reached
  std::uint32_t runs_reached = 0;
};

struct CollectionTimeResult {
  std::vector<HostnameCollection> hostnames;  // by rank
  double mean_tc = std::numeric_limits<double>::quiet_NaN();
  std::uint32_t runs = 0;
  double sampling_ratio = 0;
  std::size_t not_reached = 0;  // hostnames that reached K in no run
};

// Time until K sampled requests per hostname, averaged over independent
// runs. The trace is treated as a ring: each run starts at a uniformly
// random record and observes one full revolution, so every run's window
// equals the trace span.
inline CollectionTimeResult collection_time(std::span<const HttpRequestRecord> trace,
                                            std::size_t top_n, std::uint64_t k,
                                            double sampling_ratio, std::uint32_t runs,
                                            std::uint64_t seed) {
  if (trace.empty()) throw DomainError("collection_time requires a non-empty trace");
  if (!(sampling_ratio > 0) || sampling_ratio > 1)
    throw DomainError("sampling_ratio must be in (0, 1]");
  if (runs < 1) throw DomainError("runs must be >= 1");
  if (k < 1) throw DomainError("K must be >= 1");

  // Rank hostnames by total visits, ties broken by name.
  std::map<std::string, std::uint32_t> host_ids;
  std::vector<std::string> host_names;
  std::vector<std::uint64_t> visits;
  std::vector<std::pair<double, std::uint32_t>> events;  // (ts, host id)
  events.reserve(trace.size());
  for (const auto& r : trace) {
    auto [it, inserted] = host_ids.try_emplace(r.hostname,
                                               static_cast<std::uint32_t>(host_names.size()));
    if (inserted) {
      host_names.push_back(r.hostname);
      visits.push_back(0);
    }
    ++visits[it->second];
    events.emplace_back(r.ts, it->second);
  }
  if (top_n > host_names.size())
    throw DomainError(fmt::format("top_n {} exceeds {} distinct hostnames", top_n,
                                  host_names.size()));
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::uint32_t> order(host_names.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (visits[a] != visits[b]) return visits[a] > visits[b];
    return host_names[a] < host_names[b];
  });
  // host id -> 0-based rank among the top_n, or top_n when untracked
  std::vector<std::uint32_t> rank_of(host_names.size(), static_cast<std::uint32_t>(top_n));
  for (std::size_t r = 0; r < top_n; ++r) rank_of[order[r]] = static_cast<std::uint32_t>(r);

  const std::size_t m = events.size();
  const double span = events.back().first - events.front().first;

  // tc[run][rank]; NaN = not reached in that run
  std::vector<std::vector<double>> tc(runs,
                                      std::vector<double>(top_n,
                                                          std::numeric_limits<double>::quiet_NaN()));
  auto do_run = [&](std::uint32_t run) {
    std::mt19937_64 rng(keyed_u64(seed, run));
    std::size_t start = std::min<std::size_t>(m - 1,
                                              static_cast<std::size_t>(unit_double(rng()) *
                                                                       static_cast<double>(m)));
    const double t0 = events[start].first;
    std::vector<std::uint64_t> counts(top_n, 0);
    std::size_t done = 0;
    for (std::size_t step = 0; step < m && done < top_n; ++step) {
      std::size_t i = start + step;
      bool wrapped = i >= m;
      if (wrapped) i -= m;
      if (unit_double(rng()) >= sampling_ratio) continue;
      std::uint32_t rank = rank_of[events[i].second];
      if (rank >= top_n || counts[rank] >= k) continue;
      if (++counts[rank] == k) {
        double elapsed = events[i].first - t0;
        if (wrapped) elapsed += span;
        tc[run][rank] = elapsed;
        ++done;
      }
    }
  };

  unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), runs));
  if (workers > 1) {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        for (std::uint32_t run = w; run < runs; run += workers) do_run(run);
      });
    for (auto& t : threads) t.join();
  } else {
    for (std::uint32_t run = 0; run < runs; ++run) do_run(run);
  }

  CollectionTimeResult res;
  res.runs = runs;
  res.sampling_ratio = sampling_ratio;
  res.hostnames.resize(top_n);
  for (std::size_t r = 0; r < top_n; ++r) {
    HostnameCollection& h = res.hostnames[r];
    h.hostname = host_names[order[r]];
    h.rank = r + 1;
    h.visits = visits[order[r]];
    double sum = 0;
    std::uint32_t reached = 0;
    for (std::uint32_t run = 0; run < runs; ++run) {
      if (!std::isnan(tc[run][r])) {
        sum += tc[run][r];
        ++reached;
      }
    }
    h.runs_reached = reached;
    if (reached > 0) h.mean_tc = sum / reached;
    else ++res.not_reached;
  }
  // mean_tc = mean over runs of that run's mean over reached hostnames
  double run_mean_sum = 0;
  std::uint32_t runs_with_data = 0;
  for (std::uint32_t run = 0; run < runs; ++run) {
    double sum = 0;
    std::size_t cnt = 0;
    for (std::size_t r = 0; r < top_n; ++r)
      if (!std::isnan(tc[run][r])) {
        sum += tc[run][r];
        ++cnt;
      }
    if (cnt > 0) {
      run_mean_sum += sum / static_cast<double>(cnt);
      ++runs_with_data;
    }
  }
  if (runs_with_data > 0) res.mean_tc = run_mean_sum / runs_with_data;
  return res;
}

inline std::string collection_to_tsv(const CollectionTimeResult& res) {
  std::string out;
  for (const auto& h : res.hostnames) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\n", h.hostname, h.rank, h.visits,
                       h.runs_reached > 0 ? fmt::format("{:.3f}", h.mean_tc) : "-",
                       h.runs_reached);
  }
  out += fmt::format("mean_tc_s={:.3f} hostnames={} not_reached={}\n", res.mean_tc,
                     res.hostnames.size(), res.not_reached);
  return out;
}

inline nlohmann::json collection_to_json(const CollectionTimeResult& res) {
  nlohmann::json hosts = nlohmann::json::array();
  for (const auto& h : res.hostnames) {
    nlohmann::json e = {{"hostname", h.hostname},
                        {"rank", h.rank},
                        {"visits", h.visits},
                        {"runs_reached", h.runs_reached}};
    if (h.runs_reached > 0) e["mean_tc_s"] = h.mean_tc;
    else e["mean_tc_s"] = nullptr;
    hosts.push_back(std::move(e));
  }
  return {{"mean_tc_s", res.mean_tc},
          {"hostnames", res.hostnames.size()},
          {"not_reached", res.not_reached},
          {"runs", res.runs},
          {"sampling_ratio", res.sampling_ratio},
          {"per_hostname", std::move(hosts)}};
}

}  // namespace crowdsurf
