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

// HTTP/1.1 + JSON front end for the collector store.
//
//   POST /v1/register            -> {contributor_id, epoch_salt, epoch_length_s}
//   POST /v1/reports             -> {accepted_count} | 401 | 400 | 413
//   GET  /v1/query?target=&from=&to=  (admin) -> JSON array of records
//   POST /v1/purge               (admin) -> {purged}
//
// When an admin token is configured, query and purge require
// "Authorization: Bearer <token>".

#pragma once

#include <charconv>
#include <chrono>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "crowdsurf/collector.hpp"

namespace crowdsurf {

inline double wallclock_seconds() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

class CollectorService {
 public:
  explicit CollectorService(CollectorStore& store, std::string admin_token = {})
      : store_(store), admin_token_(std::move(admin_token)) {
    setup_routes();
  }

  httplib::Server& server() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  static void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  bool admin_ok(const httplib::Request& req) const {
    if (admin_token_.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + admin_token_;
  }

  void setup_routes() {
    server_.Post("/v1/register", [this](const httplib::Request&, httplib::Response& res) {
      RegistrationGrant grant = store_.register_contributor(wallclock_seconds());
      reply_json(res, 200,
                 {{"contributor_id", grant.contributor_id},
                  {"epoch_salt", base64_encode(grant.epoch_salt.data(), grant.epoch_salt.size())},
                  {"epoch_length_s", grant.epoch_length_s}});
    });

    server_.Post("/v1/reports", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        reply_json(res, 400, {{"error", "invalid JSON body"}});
        return;
      }
      try {
        ReportBatch batch;
        batch.contributor_id = j.value("contributor_id", std::string{});
        if (!j.contains("created_at") || !j["created_at"].is_number())
          throw ValidationError("missing created_at");
        batch.created_at = j["created_at"].get<double>();
        if (!j.contains("records") || !j["records"].is_array())
          throw ValidationError("missing records array");
        for (const auto& rec : j["records"]) batch.records.push_back(record_from_json(rec));
        std::size_t accepted = store_.submit_batch(batch, wallclock_seconds());
        reply_json(res, 200, {{"accepted_count", accepted}});
      } catch (const UnknownContributorError& e) {
        reply_json(res, 401, {{"error", e.what()}});
      } catch (const OversizedBatchError& e) {
        reply_json(res, 413, {{"error", e.what()}});
      } catch (const ValidationError& e) {
        reply_json(res, 400, {{"error", e.what()}});
      }
    });

    server_.Get("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admin_ok(req)) {
        reply_json(res, 401, {{"error", "admin token required"}});
        return;
      }
      std::string target = req.get_param_value("target");
      if (target.empty()) {
        reply_json(res, 400, {{"error", "missing target parameter"}});
        return;
      }
      auto parse_bound = [&](const char* name, double fallback) {
        std::string v = req.get_param_value(name);
        if (v.empty()) return fallback;
        double out = fallback;
        auto r = std::from_chars(v.data(), v.data() + v.size(), out);
        if (r.ec != std::errc() || r.ptr != v.data() + v.size())
          throw ValidationError(std::string("bad ") + name);
        return out;
      };
      try {
        double from = parse_bound("from", 0.0);
        double to = parse_bound("to", std::numeric_limits<double>::max());
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : store_.query_third_party(target, from, to, wallclock_seconds()))
          arr.push_back(record_to_json(r));
        reply_json(res, 200, arr);
      } catch (const ValidationError& e) {
        reply_json(res, 400, {{"error", e.what()}});
      }
    });

    server_.Post("/v1/purge", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admin_ok(req)) {
        reply_json(res, 401, {{"error", "admin token required"}});
        return;
      }
      reply_json(res, 200, {{"purged", store_.purge_expired(wallclock_seconds())}});
    });
  }

  CollectorStore& store_;
  std::string admin_token_;
  httplib::Server server_;
};

}  // namespace crowdsurf
