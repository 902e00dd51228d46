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

// Client-side reporting pipeline: sample -> anonymize -> buffer -> submit.
// Contributor identity follows the grant's epoch length; crossing an epoch
// boundary flushes the buffer and re-registers under a fresh id.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "crowdsurf/anonymize.hpp"
#include "crowdsurf/collector.hpp"
#include "crowdsurf/trace.hpp"

namespace crowdsurf {

// Emits a batch exactly when the buffered count reaches the threshold;
// flush() hands back any partial remainder.
class BatchBuffer {
 public:
  explicit BatchBuffer(std::size_t threshold) : threshold_(threshold) {
    if (threshold_ < 1) throw DomainError("batch threshold must be >= 1");
  }

  std::optional<std::vector<HttpRequestRecord>> push(HttpRequestRecord r) {
    buf_.push_back(std::move(r));
    if (buf_.size() < threshold_) return std::nullopt;
    return take();
  }

  std::optional<std::vector<HttpRequestRecord>> flush() {
    if (buf_.empty()) return std::nullopt;
    return take();
  }

  std::size_t pending() const { return buf_.size(); }

 private:
  std::vector<HttpRequestRecord> take() {
    std::vector<HttpRequestRecord> out;
    out.swap(buf_);
    return out;
  }

  std::size_t threshold_;
  std::vector<HttpRequestRecord> buf_;
};

struct ReportOptions {
  double ratio = 1.0;
  std::uint64_t seed = 0;
  std::size_t batch_threshold = 100;
  AnonRuleSet anon_rules;
  std::string forward_via;  // optional one-hop relay base URL
};

struct ReportSummary {
  std::size_t records_read = 0;
  std::size_t sampled = 0;
  std::size_t suppressed = 0;
  std::size_t submitted = 0;
  std::size_t batches = 0;
  std::size_t registrations = 0;
};

class ReportingClient {
 public:
  ReportingClient(std::string collector_url, ReportOptions opts)
      : url_(std::move(collector_url)), opts_(std::move(opts)) {}

  // Replays a trace through the pipeline, using record timestamps as the
  // clock for identity rotation.
  ReportSummary replay(std::span<const HttpRequestRecord> trace) {
    ReportSummary summary;
    if (trace.empty()) return summary;

    SamplingPolicy policy{opts_.ratio, opts_.seed};
    BatchBuffer buffer(opts_.batch_threshold);
    httplib::Client cli(endpoint());
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(10, 0);

    register_epoch(cli, trace.front().ts, summary);
    std::uint64_t counter = 0;
    for (const auto& r : trace) {
      ++summary.records_read;
      if (!sample(policy, counter++)) continue;
      ++summary.sampled;
      if (r.ts >= epoch_start_ + grant_.epoch_length_s) {
        submit(cli, buffer.flush(), summary);
        register_epoch(cli, r.ts, summary);
      }
      auto anonymized = anonymizer_->apply(r, grant_.contributor_id);
      if (!anonymized) {
        ++summary.suppressed;
        continue;
      }
      submit(cli, buffer.push(std::move(*anonymized)), summary);
    }
    submit(cli, buffer.flush(), summary);
    return summary;
  }

  const RegistrationGrant& grant() const { return grant_; }

 private:
  // With a relay configured the same requests go to the relay base URL,
  // which forwards them verbatim.
  std::string endpoint() const { return opts_.forward_via.empty() ? url_ : opts_.forward_via; }

  void register_epoch(httplib::Client& cli, double now, ReportSummary& summary) {
    auto res = cli.Post("/v1/register", "", "application/json");
    if (!res) throw IoError("cannot reach collector at " + endpoint());
    if (res->status != 200)
      throw std::runtime_error("registration failed: HTTP " + std::to_string(res->status));
    nlohmann::json j = nlohmann::json::parse(res->body);
    grant_.contributor_id = j.at("contributor_id").get<std::string>();
    grant_.epoch_salt = base64_decode(j.at("epoch_salt").get<std::string>());
    grant_.epoch_length_s = j.at("epoch_length_s").get<double>();
    epoch_start_ = std::floor(now / grant_.epoch_length_s) * grant_.epoch_length_s;
    anonymizer_.emplace(opts_.anon_rules, grant_.epoch_salt);
    ++summary.registrations;
  }

  void submit(httplib::Client& cli, std::optional<std::vector<HttpRequestRecord>> batch,
              ReportSummary& summary) {
    if (!batch || batch->empty()) return;
    double created_at = 0;
    for (const auto& r : *batch) created_at = std::max(created_at, r.ts);
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : *batch) records.push_back(record_to_json(r));
    nlohmann::json body = {{"contributor_id", grant_.contributor_id},
                           {"created_at", created_at},
                           {"records", std::move(records)}};
    auto res = cli.Post("/v1/reports", body.dump(), "application/json");
    if (!res) throw IoError("cannot reach collector at " + endpoint());
    if (res->status != 200)
      throw std::runtime_error("collector rejected batch: HTTP " + std::to_string(res->status) +
                               " " + res->body);
    nlohmann::json j = nlohmann::json::parse(res->body);
    summary.submitted += j.value("accepted_count", std::size_t{0});
    ++summary.batches;
  }

  std::string url_;
  ReportOptions opts_;
  RegistrationGrant grant_;
  double epoch_start_ = 0;
  std::optional<Anonymizer> anonymizer_;
};

}  // namespace crowdsurf
