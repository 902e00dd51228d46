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

// Cloud-side collection service: contributor registration with randomly
// assigned ids, batched report ingestion with validation, retention-bounded
// storage (append-only day files plus an in-memory index) and query access
// for the data analyzer.

#pragma once

#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "crowdsurf/anonymize.hpp"
#include "crowdsurf/trace.hpp"
#include "crowdsurf/util.hpp"

namespace crowdsurf {

class UnknownContributorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OversizedBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
  ensure_sodium();
  std::string out(sodium_base64_encoded_len(len, sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), data, len, sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.find('\0') == std::string::npos ? out.size() : out.find('\0'));
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view b64) {
  ensure_sodium();
  std::vector<unsigned char> out(b64.size());
  std::size_t out_len = 0;
  if (sodium_base642bin(out.data(), out.size(), b64.data(), b64.size(), nullptr, &out_len,
                        nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
    throw ValidationError("invalid base64");
  out.resize(out_len);
  return out;
}

struct RegistrationGrant {
  std::string contributor_id;  // 128-bit random token, hex
  Salt epoch_salt;             // 32 bytes, shared within the collector epoch
  double epoch_length_s = 86400;
};

struct ReportBatch {
  std::string contributor_id;
  std::vector<HttpRequestRecord> records;
  double created_at = 0;
};

struct StoredReport {
  ReportBatch batch;
  double received_at = 0;
  double expires_at = 0;
};

inline nlohmann::json record_to_json(const HttpRequestRecord& r) {
  return {{"ts", r.ts},         {"user", r.user}, {"method", r.method},
          {"hostname", r.hostname}, {"path", r.path}, {"referer", r.referer}};
}

inline HttpRequestRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  HttpRequestRecord r;
  try {
    r.ts = j.at("ts").get<double>();
    r.user = j.at("user").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.hostname = j.at("hostname").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.referer = j.value("referer", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed record: ") + e.what());
  }
  if (r.user.empty() || r.hostname.empty() || r.path.empty() || r.path[0] != '/')
    throw ValidationError("malformed record fields");
  return r;
}

struct CollectorConfig {
  double retention_seconds = 7 * 86400.0;
  std::size_t max_batch_records = 1000;
  double clock_skew_tolerance = 300.0;
  double epoch_length = 86400.0;
  std::string data_dir;  // empty -> in-memory only
};

class CollectorStore {
 public:
  explicit CollectorStore(CollectorConfig cfg = {},
                          std::uint64_t seed = std::random_device{}())
      : cfg_(std::move(cfg)), rng_(seed), epoch_salt_(fresh_salt()) {
    if (cfg_.retention_seconds <= 0) throw DomainError("retention must be positive");
    if (!cfg_.data_dir.empty()) {
      std::filesystem::create_directories(cfg_.data_dir);
      load_data_dir();
    }
  }

  const CollectorConfig& config() const { return cfg_; }

  RegistrationGrant register_contributor(double now) {
    (void)now;
    std::lock_guard lock(mu_);
    std::string id;
    do {
      id = random_token128(rng_);
    } while (!active_ids_.insert(id).second);
    return {id, epoch_salt_, cfg_.epoch_length};
  }

  std::size_t submit_batch(const ReportBatch& b, double now) {
    std::lock_guard lock(mu_);
    if (!active_ids_.count(b.contributor_id))
      throw UnknownContributorError("unknown contributor id");
    if (b.records.empty()) throw ValidationError("batch has no records");
    if (b.records.size() > cfg_.max_batch_records)
      throw OversizedBatchError(fmt::format("batch of {} exceeds max {}", b.records.size(),
                                            cfg_.max_batch_records));
    for (const auto& r : b.records) {
      if (r.ts > b.created_at)
        throw ValidationError("record timestamp after batch created_at");
      if (r.ts > now + cfg_.clock_skew_tolerance)
        throw ValidationError("record timestamp in the future");
      if (r.user.empty()) throw ValidationError("record with empty user");
      // every surviving query value must be a 16-hex anonymized token
      for (const auto& p : extract_query_params(r.path))
        if (!is_hex_token(p.value, 16))
          throw ValidationError("cleartext query value for key '" + p.key + "'");
    }
    StoredReport sr{b, now, now + cfg_.retention_seconds};
    if (!cfg_.data_dir.empty()) persist(sr);
    reports_.push_back(std::move(sr));
    return b.records.size();
  }

  std::vector<HttpRequestRecord> query_third_party(std::string_view target, double from,
                                                   double to, double now) const {
    std::lock_guard lock(mu_);
    std::vector<HttpRequestRecord> out;
    for (const auto& sr : reports_) {
      if (sr.expires_at <= now) continue;
      for (const auto& r : sr.batch.records)
        if (r.ts >= from && r.ts <= to && is_third_party(r, target)) out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.ts < b.ts; });
    return out;
  }

  std::size_t purge_expired(double now) {
    std::lock_guard lock(mu_);
    std::size_t before = reports_.size();
    std::erase_if(reports_, [now](const StoredReport& sr) { return sr.expires_at <= now; });
    if (!cfg_.data_dir.empty()) {
      for (auto it = day_expiry_.begin(); it != day_expiry_.end();) {
        if (it->second <= now) {
          std::error_code ec;
          std::filesystem::remove(day_path(it->first), ec);
          it = day_expiry_.erase(it);
        } else {
          ++it;
        }
      }
    }
    return before - reports_.size();
  }

  std::size_t stored_report_count() const {
    std::lock_guard lock(mu_);
    return reports_.size();
  }

 private:
  static std::string day_key(double received_at) {
    std::time_t t = static_cast<std::time_t>(received_at);
    std::tm tm{};
    gmtime_r(&t, &tm);
    return fmt::format("{:04}{:02}{:02}", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday);
  }

  std::filesystem::path day_path(const std::string& day) const {
    return std::filesystem::path(cfg_.data_dir) / ("reports-" + day + ".jsonl");
  }

  void persist(const StoredReport& sr) {
    std::string day = day_key(sr.received_at);
    std::ofstream out(day_path(day), std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot append to report log for day " + day);
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : sr.batch.records) records.push_back(record_to_json(r));
    nlohmann::json line = {{"contributor_id", sr.batch.contributor_id},
                           {"created_at", sr.batch.created_at},
                           {"received_at", sr.received_at},
                           {"expires_at", sr.expires_at},
                           {"records", std::move(records)}};
    out << line.dump() << '\n';
    auto [it, inserted] = day_expiry_.try_emplace(day, sr.expires_at);
    if (!inserted) it->second = std::max(it->second, sr.expires_at);
  }

  void load_data_dir() {
    namespace fs = std::filesystem;
    for (const auto& entry : fs::directory_iterator(cfg_.data_dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
      std::ifstream in(entry.path());
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;  // skip torn tail writes
        StoredReport sr;
        sr.batch.contributor_id = j.value("contributor_id", std::string{});
        sr.batch.created_at = j.value("created_at", 0.0);
        sr.received_at = j.value("received_at", 0.0);
        sr.expires_at = j.value("expires_at", 0.0);
        for (const auto& rec : j.value("records", nlohmann::json::array()))
          sr.batch.records.push_back(record_from_json(rec));
        if (sr.batch.records.empty()) continue;
        active_ids_.insert(sr.batch.contributor_id);
        std::string day = day_key(sr.received_at);
        auto [it, inserted] = day_expiry_.try_emplace(day, sr.expires_at);
        if (!inserted) it->second = std::max(it->second, sr.expires_at);
        reports_.push_back(std::move(sr));
      }
    }
  }

  CollectorConfig cfg_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  Salt epoch_salt_;
  std::set<std::string> active_ids_;
  std::vector<StoredReport> reports_;
  std::map<std::string, double> day_expiry_;  // day file -> latest expiry
};

}  // namespace crowdsurf
