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

// Client-side anonymization: deterministic sampling, keyed hashing of query
// values, pattern-based scrubbing and rotating contributor identities.
//
// Anonymization rule files reuse the rule-file TSV shape with actions
// {hashvalue, droppair, droprecord}; the field column is "key" to match
// query key names, or hostname/path/referer for whole-record suppression.

#pragma once

#include <sodium.h>

#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "crowdsurf/trace.hpp"
#include "crowdsurf/util.hpp"

namespace crowdsurf {

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

struct SamplingPolicy {
  double ratio = 1.0;  // in [0, 1]
  std::uint64_t seed = 0;
};

// Keep/drop decision for the counter-th record of a client. A keyed PRF of
// (seed, counter) makes replays of the same trace bit-identical.
inline bool sample(const SamplingPolicy& p, std::uint64_t counter) {
  if (p.ratio < 0 || p.ratio > 1 || !std::isfinite(p.ratio))
    throw DomainError("sampling ratio must be in [0, 1]");
  return unit_double(keyed_u64(p.seed, counter)) < p.ratio;
}

enum class AnonAction { HashValue, DropPair, DropRecord };

enum class AnonField { Key, Hostname, Path, Referer };

struct AnonymizationRule {
  std::string id;
  AnonField field = AnonField::Key;
  std::string pattern_src;
  std::regex pattern;
  AnonAction action = AnonAction::HashValue;
  int priority = 0;
};

using AnonRuleSet = std::vector<AnonymizationRule>;

inline AnonRuleSet parse_anon_rules(std::istream& in) {
  AnonRuleSet rules;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_comment_or_blank(trim(line))) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 5)
      throw RuleError("anonymization rule line " + std::to_string(line_number) +
                      ": expected 5 columns");
    AnonymizationRule r;
    {
      std::string_view pr = cols[0];
      auto res = std::from_chars(pr.data(), pr.data() + pr.size(), r.priority);
      if (res.ec != std::errc() || res.ptr != pr.data() + pr.size())
        throw RuleError("anonymization rule line " + std::to_string(line_number) +
                        ": bad priority");
    }
    r.id = std::string(cols[1]);
    if (r.id.empty() || !ids.insert(r.id).second)
      throw RuleError("anonymization rule line " + std::to_string(line_number) +
                      ": missing or duplicate id");
    std::string_view field = cols[2];
    if (field == "key") r.field = AnonField::Key;
    else if (field == "hostname") r.field = AnonField::Hostname;
    else if (field == "path") r.field = AnonField::Path;
    else if (field == "referer") r.field = AnonField::Referer;
    else throw RuleError("rule '" + r.id + "': unknown field '" + std::string(field) + "'");
    r.pattern_src = std::string(cols[3]);
    try {
      r.pattern = std::regex(r.pattern_src, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw RuleError("rule '" + r.id + "': invalid regex: " + e.what());
    }
    std::string_view action = cols[4];
    if (action == "hashvalue") r.action = AnonAction::HashValue;
    else if (action == "droppair") r.action = AnonAction::DropPair;
    else if (action == "droprecord") r.action = AnonAction::DropRecord;
    else throw RuleError("rule '" + r.id + "': unknown action '" + std::string(action) + "'");
    if (r.field != AnonField::Key && r.action != AnonAction::DropRecord)
      throw RuleError("rule '" + r.id + "': record-level fields only support droprecord");
    rules.push_back(std::move(r));
  }
  std::sort(rules.begin(), rules.end(), [](const auto& a, const auto& b) {
    if (a.priority != b.priority) return a.priority < b.priority;
    return a.id < b.id;
  });
  return rules;
}

inline AnonRuleSet parse_anon_rules_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_anon_rules(in);
}

using Salt = std::vector<unsigned char>;

inline Salt fresh_salt() {
  ensure_sodium();
  Salt salt(32);
  randombytes_buf(salt.data(), salt.size());
  return salt;
}

// Keyed BLAKE2b over (key, value), hex-encoded and truncated to 16 chars
// (64 bits). Equal cleartext hashes equally under the same salt, which is
// what keeps hashed values joinable across contributors within an epoch.
inline std::string keyed_value_digest(const Salt& salt, std::string_view key,
                                      std::string_view value) {
  ensure_sodium();
  if (salt.empty()) throw DomainError("salt must be non-empty");
  std::string message;
  message.reserve(key.size() + 1 + value.size());
  message += key;
  message.push_back('\x1f');  // unit separator; keeps (k,v) framing unambiguous
  message += value;
  unsigned char digest[32];
  crypto_generichash(digest, sizeof digest,
                     reinterpret_cast<const unsigned char*>(message.data()), message.size(),
                     salt.data(), std::min<std::size_t>(salt.size(), crypto_generichash_KEYBYTES_MAX));
  return to_hex(digest, sizeof digest).substr(0, 16);
}

struct ContributorIdentity {
  std::string id;           // 128-bit random token, hex
  double epoch_start = 0;   // seconds since epoch
  double epoch_length = 86400;
};

inline ContributorIdentity make_identity(std::mt19937_64& rng, double now,
                                         double epoch_length = 86400) {
  if (epoch_length <= 0) throw DomainError("epoch_length must be positive");
  ContributorIdentity id;
  id.id = random_token128(rng);
  id.epoch_length = epoch_length;
  id.epoch_start = std::floor(now / epoch_length) * epoch_length;
  return id;
}

// Unchanged inside the current epoch; a fresh random id aligned to the
// epoch grid once `now` crosses the boundary.
inline ContributorIdentity rotate_identity(const ContributorIdentity& cur, double now,
                                           std::mt19937_64& rng) {
  if (cur.epoch_length <= 0) throw DomainError("epoch_length must be positive");
  if (now < cur.epoch_start + cur.epoch_length) return cur;
  return make_identity(rng, now, cur.epoch_length);
}

// Applies the rule list to one record. Record-level rules run first; then
// each query pair takes the first matching key rule, with HashValue as the
// default when nothing matches. Returns nullopt when a DropRecord fired.
class Anonymizer {
 public:
  Anonymizer(AnonRuleSet rules, Salt salt) : rules_(std::move(rules)), salt_(std::move(salt)) {
    if (salt_.empty()) throw DomainError("salt must be non-empty");
  }

  const Salt& salt() const { return salt_; }

  std::optional<HttpRequestRecord> apply(const HttpRequestRecord& r,
                                         std::string_view contributor_id) const {
    for (const auto& rule : rules_) {
      if (rule.field == AnonField::Key) continue;
      std::string_view field = rule.field == AnonField::Hostname ? std::string_view(r.hostname)
                               : rule.field == AnonField::Path   ? std::string_view(r.path)
                                                                 : std::string_view(r.referer);
      if (std::regex_search(field.begin(), field.end(), rule.pattern)) return std::nullopt;
    }
    HttpRequestRecord out = r;
    out.user = std::string(contributor_id);
    if (!scrub_query(out.path)) return std::nullopt;
    if (!scrub_query(out.referer)) return std::nullopt;
    return out;
  }

 private:
  // Rewrites the query part of `s` in place; false means DropRecord fired.
  bool scrub_query(std::string& s) const {
    std::size_t qpos = s.find('?');
    if (qpos == std::string::npos) return true;
    auto params = extract_query_params(s);
    std::string rebuilt = s.substr(0, qpos);
    bool any = false;
    for (const auto& p : params) {
      AnonAction action = AnonAction::HashValue;
      for (const auto& rule : rules_) {
        if (rule.field != AnonField::Key) continue;
        if (std::regex_search(p.key, rule.pattern)) {
          action = rule.action;
          break;
        }
      }
      if (action == AnonAction::DropRecord) return false;
      if (action == AnonAction::DropPair) continue;
      rebuilt += any ? '&' : '?';
      rebuilt += p.key;
      rebuilt += '=';
      rebuilt += keyed_value_digest(salt_, p.key, p.value);
      any = true;
    }
    s = std::move(rebuilt);
    return true;
  }

  AnonRuleSet rules_;
  Salt salt_;
};

}  // namespace crowdsurf
